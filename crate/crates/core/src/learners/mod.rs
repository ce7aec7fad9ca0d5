//! Classifiers trained to minimize balanced error rate.
//!
//! Every learner weights example `j` by `D_j = n / (2 n_{y_j})` so that both
//! classes carry equal total weight. Targets are `bool`; `true` is the
//! positive class (+1).

mod cv;
mod gnb;
mod logreg;
mod svm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cv::{cost_grid, cross_validate, stratified_folds, CVOutcome, CVPlan};
pub use gnb::{train_balanced_gnb, GaussianNBModel};
pub use logreg::{logreg_gradient, logreg_objective, train_balanced_logreg, LogregFit};
pub use svm::{svm_objective, train_weighted_svm, train_weighted_svm_with, SvmFit, SvmOptions};

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::LengthMismatch {
                left: n * d,
                right: data.len(),
            });
        }
        Ok(Features { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch {
                left: d,
                right: bad.len(),
            });
        }
        Ok(Features {
            n: rows.len(),
            d,
            data: rows.concat(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-width matrix still has n empty rows
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn subset(&self, indices: &[usize]) -> Features {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Features {
            n: indices.len(),
            d: self.d,
            data,
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("features contain non-finite values".into()))
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-example weights `D_j = n / (2 n_{y_j})`; `D_j / n` sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn balanced(targets: &[bool]) -> Result<Self> {
        let n = targets.len();
        let n_pos = targets.iter().filter(|&&t| t).count();
        let n_neg = n - n_pos;
        if n_pos == 0 {
            return Err(Error::MissingClass("positive"));
        }
        if n_neg == 0 {
            return Err(Error::MissingClass("negative"));
        }
        let w_pos = n as f64 / (2.0 * n_pos as f64);
        let w_neg = n as f64 / (2.0 * n_neg as f64);
        Ok(ClassWeights(
            targets.iter().map(|&t| if t { w_pos } else { w_neg }).collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `sum_j D_j / n`; one up to rounding.
    pub fn normalized_sum(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Svm,
    Logreg,
    Gnb,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 3] = [LearnerKind::Svm, LearnerKind::Logreg, LearnerKind::Gnb];

    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Svm => "svm",
            LearnerKind::Logreg => "logreg",
            LearnerKind::Gnb => "gnb",
        }
    }

    pub fn uses_cost(&self) -> bool {
        !matches!(self, LearnerKind::Gnb)
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svm" => Ok(LearnerKind::Svm),
            "logreg" | "lr" => Ok(LearnerKind::Logreg),
            "gnb" => Ok(LearnerKind::Gnb),
            other => Err(Error::InvalidInput(format!("unknown learner `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Svm,
    Logreg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub cost: f64,
    #[serde(default)]
    pub column_names: Vec<String>,
}

impl LinearModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        dot(&self.weights, row) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainedModel {
    Linear(LinearModel),
    Gnb(GaussianNBModel),
}

impl TrainedModel {
    pub fn width(&self) -> usize {
        match self {
            TrainedModel::Linear(m) => m.weights.len(),
            TrainedModel::Gnb(m) => m.means[0].len(),
        }
    }

    pub fn with_column_names(mut self, names: &[String]) -> Self {
        match &mut self {
            TrainedModel::Linear(m) => m.column_names = names.to_vec(),
            TrainedModel::Gnb(m) => m.column_names = names.to_vec(),
        }
        self
    }
}

/// Labels for each row: sign of `<w,x> + b` with 0 mapped to positive for
/// linear models, maximum posterior for naive Bayes.
pub fn predict(model: &TrainedModel, rows: &Features) -> Result<Vec<bool>> {
    if rows.n_cols() != model.width() {
        return Err(Error::LengthMismatch {
            left: model.width(),
            right: rows.n_cols(),
        });
    }
    Ok(match model {
        TrainedModel::Linear(m) => rows.rows().map(|r| m.decision(r) >= 0.0).collect(),
        TrainedModel::Gnb(m) => rows.rows().map(|r| m.predict_row(r)).collect(),
    })
}

/// Trains one learner at a fixed cost (ignored by naive Bayes). A solver
/// that stops at its iteration cap yields its best iterate with a warning.
pub fn fit(kind: LearnerKind, x: &Features, y: &[bool], cost: f64) -> Result<TrainedModel> {
    let result = match kind {
        LearnerKind::Svm => train_weighted_svm(x, y, cost).map(TrainedModel::Linear),
        LearnerKind::Logreg => train_balanced_logreg(x, y, cost).map(TrainedModel::Linear),
        LearnerKind::Gnb => train_balanced_gnb(x, y).map(TrainedModel::Gnb),
    };
    match result {
        Err(Error::NotConverged { iterations, best }) => {
            log::warn!("{kind} at cost {cost} stopped after {iterations} iterations; using best iterate");
            Ok(*best)
        }
        other => other,
    }
}

fn check_training_input(x: &Features, y: &[bool]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.n_rows(),
            right: y.len(),
        });
    }
    x.check_finite()
}

fn signs(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&t| if t { 1.0 } else { -1.0 }).collect()
}
