//! Repair sweeps: DI and utility of classifiers trained on repaired data
//! across a grid of repair amounts.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{preprocess, split_indices, Dataset, RawTable, SchemaConfig};
use crate::error::{Error, Result};
use crate::learners::{cross_validate, predict, CVPlan, LearnerKind};
use crate::metrics::{accuracy, average_di, ber, subgroup_disparate_impact, utility, zemel_fairness};
use crate::repair::{repair_dataset, RepairMode, RepairPlan};

pub const CURVE_COLUMNS: [&str; 9] = [
    "mode",
    "lambda",
    "classifier",
    "di",
    "utility",
    "ber_protected",
    "zemel_fairness",
    "accuracy",
    "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VersionMode {
    Original,
    Combinatorial,
    Geometric,
}

impl VersionMode {
    pub fn name(&self) -> &'static str {
        match self {
            VersionMode::Original => "original",
            VersionMode::Combinatorial => "combinatorial",
            VersionMode::Geometric => "geometric",
        }
    }
}

impl fmt::Display for VersionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Version {
    pub mode: VersionMode,
    pub lambda: f64,
}

/// A classifier in the sweep: a trained learner, or a fixed threshold on
/// one raw attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepClassifier {
    Learner(LearnerKind),
    Threshold,
}

impl SweepClassifier {
    pub fn name(&self) -> &'static str {
        match self {
            SweepClassifier::Learner(k) => k.name(),
            SweepClassifier::Threshold => "threshold",
        }
    }
}

impl fmt::Display for SweepClassifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepClassifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "threshold" {
            Ok(SweepClassifier::Threshold)
        } else {
            s.parse().map(SweepClassifier::Learner)
        }
    }
}

/// `YES` iff the raw (unscaled) value of `column` is at least `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRule {
    pub column: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub lambdas: Vec<f64>,
    pub modes: Vec<RepairMode>,
    pub classifiers: Vec<SweepClassifier>,
    pub seed: u64,
    pub tau: f64,
    pub test_fraction: f64,
    /// Empty means the joint distribution of every protected column.
    pub stratify: Vec<String>,
    pub threshold_rule: Option<ThresholdRule>,
    /// Learners searched for the best predictor of the group.
    pub protected_learners: Vec<LearnerKind>,
    pub cv: CVPlan,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            lambdas: (1..=10).map(|k| k as f64 / 10.0).collect(),
            modes: vec![RepairMode::Combinatorial, RepairMode::Geometric],
            classifiers: LearnerKind::ALL.iter().map(|&k| SweepClassifier::Learner(k)).collect(),
            seed: 42,
            tau: 0.8,
            test_fraction: 1.0 / 3.0,
            stratify: Vec::new(),
            threshold_rule: None,
            protected_learners: LearnerKind::ALL.to_vec(),
            cv: CVPlan::default(),
        }
    }
}

impl SweepSpec {
    pub fn with_seed(seed: u64) -> Self {
        SweepSpec {
            seed,
            cv: CVPlan::with_seed(seed),
            ..SweepSpec::default()
        }
    }

    /// The unrepaired data followed by every (mode, lambda) pair.
    pub fn versions(&self) -> Vec<Version> {
        let mut out = vec![Version {
            mode: VersionMode::Original,
            lambda: 0.0,
        }];
        for mode in &self.modes {
            let mode = match mode {
                RepairMode::Combinatorial => VersionMode::Combinatorial,
                RepairMode::Geometric => VersionMode::Geometric,
                RepairMode::Full => continue,
            };
            out.extend(self.lambdas.iter().map(|&lambda| Version { mode, lambda }));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.classifiers.is_empty() {
            return Err(Error::InvalidInput("no classifiers requested".into()));
        }
        if self.modes.contains(&RepairMode::Full) {
            return Err(Error::InvalidInput(
                "sweep modes are combinatorial and geometric; full repair is lambda = 1".into(),
            ));
        }
        if let Some(&bad) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::InvalidInput(format!("lambda {bad} outside [0, 1]")));
        }
        if self.classifiers.contains(&SweepClassifier::Threshold) && self.threshold_rule.is_none() {
            return Err(Error::InvalidInput("threshold classifier needs a threshold rule".into()));
        }
        Ok(())
    }
}

/// Train and test row indices into a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn seeded(n: usize, test_fraction: f64, seed: u64) -> Result<Self> {
        let (train, test) = split_indices(n, test_fraction, seed)?;
        Ok(Split { train, test })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub mode: VersionMode,
    pub lambda: f64,
    pub classifier: String,
    pub di: f64,
    pub utility: f64,
    pub ber_protected: f64,
    pub zemel_fairness: f64,
    pub accuracy: f64,
    /// Set on rows whose classifier failed; the metrics are then NaN.
    pub error: Option<String>,
}

impl CurvePoint {
    fn failed(version: Version, classifier: &str, ber_protected: f64, err: &Error) -> Self {
        CurvePoint {
            mode: version.mode,
            lambda: version.lambda,
            classifier: classifier.into(),
            di: f64::NAN,
            utility: f64::NAN,
            ber_protected,
            zemel_fairness: f64::NAN,
            accuracy: f64::NAN,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassifierMetrics {
    pub di: f64,
    pub utility: f64,
    pub zemel_fairness: f64,
    pub accuracy: f64,
}

/// Advantaged-group indicator per row (`true` = X=1).
pub fn advantaged(data: &Dataset) -> Vec<bool> {
    data.keys().iter().map(|k| !data.is_protected_key(k)).collect()
}

/// Trains `classifier` on the train rows to predict the outcome and scores
/// its test predictions against the original labels.
pub fn evaluate_classifier(
    data: &Dataset,
    split: &Split,
    classifier: SweepClassifier,
    spec: &SweepSpec,
) -> Result<ClassifierMetrics> {
    let test = data.subset(&split.test);
    let predicted = match classifier {
        SweepClassifier::Learner(kind) => {
            let train = data.subset(&split.train);
            let cv = cross_validate(kind, &train.features(), train.labels(), &spec.cv)?;
            predict(&cv.model, &test.features())?
        }
        SweepClassifier::Threshold => {
            let rule = spec
                .threshold_rule
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("no threshold rule".into()))?;
            let a = test.attribute_index(&rule.column)?;
            let scale = test.scales()[a];
            test.columns()[a]
                .iter()
                .map(|&v| scale.unscale(v) >= rule.threshold - 1e-9 * rule.threshold.abs().max(1.0))
                .collect()
        }
    };
    let subgroups = subgroup_disparate_impact(&predicted, test.keys(), |k| test.is_protected_key(k))?;
    Ok(ClassifierMetrics {
        di: average_di(&subgroups),
        utility: utility(&predicted, test.labels())?,
        zemel_fairness: zemel_fairness(&predicted, &advantaged(&test))?,
        accuracy: accuracy(&predicted, test.labels())?,
    })
}

/// Lowest test BER of any learner predicting the advantaged indicator.
pub fn protected_ber(data: &Dataset, split: &Split, learners: &[LearnerKind], plan: &CVPlan) -> Result<f64> {
    let target = advantaged(data);
    let x = data.features();
    let y_train: Vec<bool> = split.train.iter().map(|&i| target[i]).collect();
    let y_test: Vec<bool> = split.test.iter().map(|&i| target[i]).collect();
    let x_train = x.subset(&split.train);
    let x_test = x.subset(&split.test);
    let mut best = f64::INFINITY;
    let mut last_err = None;
    for &kind in learners {
        let attempt = cross_validate(kind, &x_train, &y_train, plan)
            .and_then(|cv| predict(&cv.model, &x_test))
            .and_then(|p| ber(&p, &y_test));
        match attempt {
            Ok(b) => best = best.min(b),
            Err(e) => {
                log::warn!("{kind} failed to predict the protected group: {e}");
                last_err = Some(e);
            }
        }
    }
    match last_err {
        Some(e) if best.is_infinite() => Err(e),
        _ => Ok(best),
    }
}

pub fn repaired_version(data: &Dataset, version: Version, stratify: &[String]) -> Result<Dataset> {
    let mode = match version.mode {
        VersionMode::Original => return Ok(data.clone()),
        VersionMode::Combinatorial => RepairMode::Combinatorial,
        VersionMode::Geometric => RepairMode::Geometric,
    };
    repair_dataset(data, &RepairPlan::new(mode, version.lambda, stratify.to_vec())?)
}

/// One [`CurvePoint`] per (version, classifier), sorted by mode, lambda and
/// classifier name. Classifier failures become error rows.
pub fn sweep(data: &Dataset, split: &Split, spec: &SweepSpec) -> Result<Vec<CurvePoint>> {
    spec.validate()?;
    let versions = spec.versions();
    let mut points: Vec<CurvePoint> = versions
        .par_iter()
        .map(|&version| {
            let repaired = repaired_version(data, version, &spec.stratify)?;
            let ber_protected = if spec.protected_learners.is_empty() {
                f64::NAN
            } else {
                protected_ber(&repaired, split, &spec.protected_learners, &spec.cv).unwrap_or(f64::NAN)
            };
            Ok(spec
                .classifiers
                .iter()
                .map(|&c| match evaluate_classifier(&repaired, split, c, spec) {
                    Ok(m) => CurvePoint {
                        mode: version.mode,
                        lambda: version.lambda,
                        classifier: c.name().into(),
                        di: m.di,
                        utility: m.utility,
                        ber_protected,
                        zemel_fairness: m.zemel_fairness,
                        accuracy: m.accuracy,
                        error: None,
                    },
                    Err(e) => CurvePoint::failed(version, c.name(), ber_protected, &e),
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    points.sort_by(|a, b| {
        a.mode
            .cmp(&b.mode)
            .then(a.lambda.partial_cmp(&b.lambda).unwrap_or(Ordering::Equal))
            .then_with(|| a.classifier.cmp(&b.classifier))
    });
    Ok(points)
}

fn number(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn write_curves<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    w.write_record(CURVE_COLUMNS).map_err(err)?;
    for p in points {
        w.write_record([
            p.mode.name().to_string(),
            p.lambda.to_string(),
            p.classifier.clone(),
            number(p.di),
            number(p.utility),
            number(p.ber_protected),
            number(p.zemel_fairness),
            number(p.accuracy),
            p.error.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

/// Places where the best group-prediction BER drops by more than
/// `tolerance` as lambda grows within a mode.
pub fn ber_monotonicity_warnings(points: &[CurvePoint], tolerance: f64) -> Vec<String> {
    let original = points
        .iter()
        .find(|p| p.mode == VersionMode::Original)
        .map(|p| p.ber_protected);
    let mut warnings = Vec::new();
    for mode in [VersionMode::Combinatorial, VersionMode::Geometric] {
        let mut series: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.mode == mode)
            .map(|p| (p.lambda, p.ber_protected))
            .collect();
        series.dedup_by(|a, b| a.0 == b.0);
        if series.is_empty() {
            continue;
        }
        let mut prev = original.map(|b| (0.0, b));
        for (lambda, b) in series {
            if let Some((pl, pb)) = prev {
                if b < pb - tolerance {
                    warnings.push(format!(
                        "{mode}: group-prediction BER fell from {pb:.4} at lambda {pl} to {b:.4} at lambda {lambda}"
                    ));
                }
            }
            prev = Some((lambda, b));
        }
    }
    warnings
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierSummary {
    pub classifier: String,
    pub baseline_di: f64,
    pub baseline_utility: f64,
    /// `(mode, di, utility)` at lambda = 1.
    pub full_repair: Vec<(VersionMode, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub versions: usize,
    pub rows: usize,
    pub failed_rows: usize,
    pub seed: u64,
    pub tau: f64,
    pub test_fraction: Option<f64>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub classifiers: Vec<ClassifierSummary>,
    pub ber_monotonicity_warnings: Vec<String>,
}

pub fn summarize(points: &[CurvePoint], spec: &SweepSpec, split: &Split, seeded: bool) -> SweepSummary {
    let classifiers = spec
        .classifiers
        .iter()
        .map(|c| {
            let rows: Vec<&CurvePoint> = points.iter().filter(|p| p.classifier == c.name()).collect();
            let base = rows.iter().find(|p| p.mode == VersionMode::Original);
            ClassifierSummary {
                classifier: c.name().into(),
                baseline_di: base.map_or(f64::NAN, |p| p.di),
                baseline_utility: base.map_or(f64::NAN, |p| p.utility),
                full_repair: rows
                    .iter()
                    .filter(|p| p.mode != VersionMode::Original && p.lambda == 1.0)
                    .map(|p| (p.mode, p.di, p.utility))
                    .collect(),
            }
        })
        .collect();
    SweepSummary {
        versions: spec.versions().len(),
        rows: points.len(),
        failed_rows: points.iter().filter(|p| p.error.is_some()).count(),
        seed: spec.seed,
        tau: spec.tau,
        test_fraction: seeded.then_some(spec.test_fraction),
        train_rows: split.train.len(),
        test_rows: split.test.len(),
        classifiers,
        ber_monotonicity_warnings: ber_monotonicity_warnings(points, 0.02),
    }
}

/// Reads and preprocesses a dataset. With `test_csv`, both files are
/// preprocessed together and the returned split follows the files.
pub fn load_dataset(
    data_csv: &Path,
    config: &SchemaConfig,
    test_csv: Option<&Path>,
) -> Result<(RawTable, Dataset, Option<Split>)> {
    let table = config.load_table(data_csv)?;
    let Some(test_path) = test_csv else {
        let data = preprocess(&table, config)?;
        return Ok((table, data, None));
    };
    let n_train = table.n_rows();
    let combined = table.concat(&config.load_table(test_path)?)?;
    let data = preprocess(&combined, config)?;
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..data.n_rows()).partition(|&i| data.source_rows()[i] < n_train);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput("train or test file has no usable rows".into()));
    }
    Ok((combined, data, Some(Split { train, test })))
}
