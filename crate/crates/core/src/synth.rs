//! Seeded synthetic datasets.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{RawTable, SchemaConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Two Gaussian score distributions by gender; admission depends on the
    /// score, so the outcome is correlated with the group.
    TwoGaussian,
    /// Features and outcome independent of the group.
    Independent,
    /// Independent data plus a column that copies the group indicator.
    PlantedLeak,
}

impl SynthKind {
    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::TwoGaussian => "two-gaussian",
            SynthKind::Independent => "independent",
            SynthKind::PlantedLeak => "planted-leak",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-gaussian" | "gaussian" => Ok(SynthKind::TwoGaussian),
            "independent" => Ok(SynthKind::Independent),
            "planted-leak" | "leak" => Ok(SynthKind::PlantedLeak),
            other => Err(Error::InvalidInput(format!("unknown synthetic dataset `{other}`"))),
        }
    }
}

pub const FEMALE_SCORE: (f64, f64) = (550.0, 100.0);
pub const MALE_SCORE: (f64, f64) = (400.0, 50.0);
pub const ADMIT_CUTOFF: f64 = 450.0;
const ADMIT_NOISE: f64 = 50.0;

/// `n` rows per group. Columns `gender`, `score`, `admit`; males are the
/// protected minority.
pub fn two_gaussian(n: usize, seed: u64) -> Result<RawTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let female = Normal::new(FEMALE_SCORE.0, FEMALE_SCORE.1).expect("valid sd");
    let male = Normal::new(MALE_SCORE.0, MALE_SCORE.1).expect("valid sd");
    let noise = Normal::new(0.0, ADMIT_NOISE).expect("valid sd");
    let mut rows = Vec::with_capacity(2 * n);
    for (gender, dist) in [("female", female), ("male", male)] {
        for _ in 0..n {
            let score: f64 = dist.sample(&mut rng);
            let admit = score + noise.sample(&mut rng) >= ADMIT_CUTOFF;
            rows.push(vec![
                gender.to_string(),
                score.to_string(),
                yes_no(admit).to_string(),
            ]);
        }
    }
    RawTable::new(vec!["gender".into(), "score".into(), "admit".into()], rows)
}

pub fn two_gaussian_config() -> SchemaConfig {
    SchemaConfig::new(vec!["gender".into()], "admit", "YES").with_minority("gender", "male")
}

/// `n` rows split evenly between groups `a` and `b` (minority), three
/// standard normal features and a fair coin for the outcome.
pub fn independent(n: usize, seed: u64) -> Result<RawTable> {
    build_independent(n, seed, false)
}

/// [`independent`] plus a `leak` column equal to the group indicator.
pub fn planted_leak(n: usize, seed: u64) -> Result<RawTable> {
    build_independent(n, seed, true)
}

pub fn independent_config() -> SchemaConfig {
    SchemaConfig::new(vec!["group".into()], "outcome", "YES").with_minority("group", "b")
}

fn build_independent(n: usize, seed: u64, leak: bool) -> Result<RawTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid sd");
    let mut header: Vec<String> = ["group", "f1", "f2", "f3"].map(String::from).to_vec();
    if leak {
        header.push("leak".into());
    }
    header.push("outcome".into());
    let rows = (0..n)
        .map(|i| {
            let group = if i < n / 2 { "a" } else { "b" };
            let mut row = vec![group.to_string()];
            for _ in 0..3 {
                row.push(normal.sample(&mut rng).to_string());
            }
            if leak {
                row.push(if group == "a" { "1" } else { "0" }.into());
            }
            row.push(yes_no(rng.gen_bool(0.5)).into());
            row
        })
        .collect();
    RawTable::new(header, rows)
}

pub fn generate(kind: SynthKind, n: usize, seed: u64) -> Result<(RawTable, SchemaConfig)> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    Ok(match kind {
        SynthKind::TwoGaussian => (two_gaussian(n, seed)?, two_gaussian_config()),
        SynthKind::Independent => (independent(n, seed)?, independent_config()),
        SynthKind::PlantedLeak => (planted_leak(n, seed)?, independent_config()),
    })
}

pub fn write_table<W: std::io::Write>(table: &RawTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(table.header()).map_err(err)?;
    for row in table.rows() {
        w.write_record(row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "YES"
    } else {
        "NO"
    }
}
