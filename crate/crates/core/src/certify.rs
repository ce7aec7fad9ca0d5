//! Certifying a dataset free of potential disparate impact.
//!
//! If no classifier can predict the protected group from the remaining
//! attributes with balanced error rate at or below
//! `eps = 1/2 - beta (1/tau - 1) / 2`, then no classifier trained on those
//! attributes can have disparate impact at threshold `tau`. Here `beta` is
//! the fraction of the minority group with the positive outcome. The
//! certificate is only as strong as the learners used to search for a
//! predictor; reports carry `assumes_ber_optimal_learner` for that reason.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{split_sizes, Dataset, GroupKey};
use crate::error::{Error, Result};
use crate::learners::{cross_validate, predict, CVPlan, LearnerKind};
use crate::metrics::ber;

/// z for a two-sided 95% normal interval.
const BETA_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdParams {
    pub tau: f64,
    pub beta: f64,
    pub beta_interval: Option<(f64, f64)>,
}

impl ThresholdParams {
    pub fn new(tau: f64, beta: f64, beta_interval: Option<(f64, f64)>) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidInput(format!("tau {tau} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidInput(format!("beta {beta} outside [0, 1]")));
        }
        if let Some((lo, hi)) = beta_interval {
            if !(lo <= beta && beta <= hi) {
                return Err(Error::InvalidInput(format!(
                    "beta {beta} not inside its interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(ThresholdParams {
            tau,
            beta,
            beta_interval,
        })
    }

    /// Threshold at the low end of the beta interval when one is given.
    pub fn epsilon(&self) -> Result<f64> {
        ber_threshold(self.beta_interval.map_or(self.beta, |(lo, _)| lo), self.tau)
    }
}

/// `1/2 - beta (1/tau - 1) / 2`.
pub fn ber_threshold(beta: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidInput(format!("tau {tau} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta {beta} outside [0, 1]")));
    }
    Ok(0.5 - beta * (1.0 / tau - 1.0) / 2.0)
}

/// Inverse of [`ber_threshold`] in `tau`: `1 - (1 - 2 eps) / (beta + 1 - 2 eps)`.
pub fn di_bound_from_ber(epsilon: f64, beta: f64) -> Result<f64> {
    if !epsilon.is_finite() || epsilon > 0.5 {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} above 1/2")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta {beta} outside [0, 1]")));
    }
    let slack = 1.0 - 2.0 * epsilon;
    let denom = beta + slack;
    if denom == 0.0 {
        return Err(Error::InvalidInput("beta + 1 - 2 epsilon is zero".into()));
    }
    Ok(1.0 - slack / denom)
}

/// Outcome read as a group prediction: YES -> X=1, NO -> X=0.
pub fn purely_biased(outcomes: &[bool]) -> Vec<bool> {
    outcomes.to_vec()
}

/// Group read back as an outcome: X=1 -> YES, X=0 -> NO.
pub fn purely_biased_inverse(groups: &[bool]) -> Vec<bool> {
    groups.to_vec()
}

/// [`purely_biased`] over string class labels; any label other than the
/// two given is an error.
pub fn purely_biased_labels<S: AsRef<str>>(labels: &[S], yes: &str, no: &str) -> Result<Vec<bool>> {
    labels
        .iter()
        .map(|l| match l.as_ref() {
            s if s == yes => Ok(true),
            s if s == no => Ok(false),
            other => Err(Error::InvalidInput(format!("unknown class label `{other}`"))),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaEstimate {
    pub beta: f64,
    pub interval: (f64, f64),
    pub minority_rows: usize,
}

/// Selection rate of the minority (`groups[i] == false`) with a normal
/// interval `beta +/- 1.96 sqrt(beta (1 - beta) / n0)` clipped to `[0, 1]`.
pub fn estimate_beta_from(outcomes: &[bool], groups: &[bool]) -> Result<BetaEstimate> {
    if outcomes.len() != groups.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: groups.len(),
        });
    }
    let (mut n0, mut yes0) = (0usize, 0usize);
    for (&o, &g) in outcomes.iter().zip(groups) {
        if !g {
            n0 += 1;
            yes0 += usize::from(o);
        }
    }
    if n0 == 0 {
        return Err(Error::EmptyGroup("X=0".into()));
    }
    let beta = yes0 as f64 / n0 as f64;
    let half = BETA_Z * (beta * (1.0 - beta) / n0 as f64).sqrt();
    Ok(BetaEstimate {
        beta,
        interval: ((beta - half).max(0.0), (beta + half).min(1.0)),
        minority_rows: n0,
    })
}

pub fn estimate_beta(data: &Dataset) -> Result<BetaEstimate> {
    estimate_beta_from(data.labels(), &data.binary_protected()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub tau: f64,
    pub plan: CVPlan,
    pub learners: Vec<LearnerKind>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            tau: 0.8,
            plan: CVPlan::default(),
            learners: LearnerKind::ALL.to_vec(),
            test_fraction: 1.0 / 3.0,
            seed: 42,
        }
    }
}

impl CertifyOptions {
    pub fn with_seed(seed: u64) -> Self {
        CertifyOptions {
            seed,
            plan: CVPlan::with_seed(seed),
            ..CertifyOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerResult {
    pub name: String,
    pub cv_cost: Option<f64>,
    pub test_ber: f64,
    pub cv_mean_bers: Vec<f64>,
}

/// Certification of one protected subgroup against the advantaged rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub protected_group: GroupKey,
    pub verdict: Verdict,
    pub best_ber: f64,
    pub epsilon_threshold: f64,
    pub beta: f64,
    pub beta_interval: (f64, f64),
    /// Lower bound on the DI of any classifier, at the point estimate of beta.
    pub di_bound: Option<f64>,
    /// The same bound across the beta interval.
    pub di_bound_interval: Option<(f64, f64)>,
    pub per_learner: Vec<LearnerResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub verdict: Verdict,
    pub best_ber: f64,
    pub epsilon_threshold: f64,
    pub tau: f64,
    pub beta: f64,
    pub beta_interval: (f64, f64),
    pub di_bound: Option<f64>,
    pub di_bound_interval: Option<(f64, f64)>,
    pub per_learner: Vec<LearnerResult>,
    pub assumes_ber_optimal_learner: bool,
    /// One entry per protected subgroup; the top-level fields repeat the
    /// pair with the smallest margin `best_ber - epsilon_threshold`.
    pub pairs: Vec<PairReport>,
}

impl CertificationReport {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

/// Trains every learner to predict the protected group from the attributes
/// and compares the best held-out BER with the threshold. Each protected
/// subgroup is tested against the advantaged rows; all must certify.
pub fn certify(data: &Dataset, options: &CertifyOptions) -> Result<CertificationReport> {
    if options.learners.is_empty() {
        return Err(Error::InvalidInput("no learners requested".into()));
    }
    if !data.labels().iter().any(|&l| l) || data.labels().iter().all(|&l| l) {
        return Err(Error::MissingClass(if data.labels().iter().any(|&l| l) {
            "negative"
        } else {
            "positive"
        }));
    }
    let index = data.group_index();
    if index.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "certification needs at least two groups, found {}",
            index.len()
        )));
    }
    if data.minority_values().is_empty() {
        return Err(Error::Config("no minority values configured".into()));
    }

    let advantaged: Vec<usize> = index
        .iter()
        .filter(|(k, _)| !data.is_protected_key(k))
        .flat_map(|(_, rows)| rows.iter().copied())
        .collect();
    if advantaged.is_empty() {
        return Err(Error::EmptyGroup("advantaged".into()));
    }

    let pairs: Vec<PairReport> = index
        .iter()
        .filter(|(k, _)| data.is_protected_key(k))
        .map(|(key, rows)| {
            let mut members: Vec<usize> = rows.iter().chain(&advantaged).copied().collect();
            members.sort_unstable();
            let majority: Vec<bool> = members.iter().map(|&i| !data.is_protected_key(&data.keys()[i])).collect();
            certify_pair(data, key, &members, &majority, options)
        })
        .collect::<Result<_>>()?;
    if pairs.is_empty() {
        return Err(Error::EmptyGroup("protected".into()));
    }

    let binding = pairs
        .iter()
        .min_by(|a, b| {
            (a.best_ber - a.epsilon_threshold).total_cmp(&(b.best_ber - b.epsilon_threshold))
        })
        .expect("nonempty");
    let verdict = if pairs.iter().all(|p| p.verdict == Verdict::Certified) {
        Verdict::Certified
    } else {
        Verdict::NotCertified
    };
    Ok(CertificationReport {
        verdict,
        best_ber: binding.best_ber,
        epsilon_threshold: binding.epsilon_threshold,
        tau: options.tau,
        beta: binding.beta,
        beta_interval: binding.beta_interval,
        di_bound: binding.di_bound,
        di_bound_interval: binding.di_bound_interval,
        per_learner: binding.per_learner.clone(),
        assumes_ber_optimal_learner: true,
        pairs: pairs.clone(),
    })
}

fn certify_pair(
    data: &Dataset,
    key: &GroupKey,
    members: &[usize],
    majority: &[bool],
    options: &CertifyOptions,
) -> Result<PairReport> {
    let outcomes: Vec<bool> = members.iter().map(|&i| data.labels()[i]).collect();
    let beta = estimate_beta_from(&outcomes, majority)?;
    let params = ThresholdParams::new(options.tau, beta.beta, Some(beta.interval))?;
    let epsilon = params.epsilon()?;

    let sub = data.subset(members);
    let x = sub.features();
    let (train, test) = stratified_split(majority, options.test_fraction, options.seed)?;
    let x_train = x.subset(&train);
    let y_train: Vec<bool> = train.iter().map(|&i| majority[i]).collect();
    let x_test = x.subset(&test);
    let y_test: Vec<bool> = test.iter().map(|&i| majority[i]).collect();

    let per_learner = options
        .learners
        .iter()
        .map(|&kind| {
            let cv = cross_validate(kind, &x_train, &y_train, &options.plan)?;
            let test_ber = ber(&predict(&cv.model, &x_test)?, &y_test)?;
            Ok(LearnerResult {
                name: kind.name().into(),
                cv_cost: cv.best_cost,
                test_ber,
                cv_mean_bers: cv.mean_bers,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_ber = per_learner.iter().map(|l| l.test_ber).fold(f64::INFINITY, f64::min);

    let clipped = best_ber.min(0.5);
    let di_bound = di_bound_from_ber(clipped, beta.beta).ok();
    let di_bound_interval = match (
        di_bound_from_ber(clipped, beta.interval.0),
        di_bound_from_ber(clipped, beta.interval.1),
    ) {
        (Ok(lo), Ok(hi)) => Some((lo, hi)),
        _ => None,
    };

    Ok(PairReport {
        protected_group: key.clone(),
        verdict: if best_ber > epsilon {
            Verdict::Certified
        } else {
            Verdict::NotCertified
        },
        best_ber,
        epsilon_threshold: epsilon,
        beta: beta.beta,
        beta_interval: beta.interval,
        di_bound,
        di_bound_interval,
        per_learner,
    })
}

/// Seeded split that keeps both values of `target` on each side.
fn stratified_split(target: &[bool], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut members: Vec<usize> = (0..target.len()).filter(|&i| target[i] == class).collect();
        let (n_train, n_test) = split_sizes(members.len(), test_fraction)?;
        if n_train == 0 || n_test == 0 {
            return Err(Error::InvalidInput(format!(
                "group with {} rows is too small to split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
