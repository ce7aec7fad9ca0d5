//! Gaussian naive Bayes with a fixed `(1/2, 1/2)` class prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{check_training_input, Features};

const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNBModel {
    /// Always `"gnb"`; present so serialized models are self-describing.
    pub kind: String,
    /// `means[class][feature]`, class 0 = negative.
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub class_prior: [f64; 2],
    #[serde(default)]
    pub column_names: Vec<String>,
}

impl GaussianNBModel {
    fn log_likelihood(&self, class: usize, row: &[f64]) -> f64 {
        let mut total = self.class_prior[class].ln();
        for ((x, mu), var) in row.iter().zip(&self.means[class]).zip(&self.variances[class]) {
            total += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mu).powi(2) / (2.0 * var);
        }
        total
    }

    /// Ties go to class 0.
    pub fn predict_row(&self, row: &[f64]) -> bool {
        self.log_likelihood(1, row) > self.log_likelihood(0, row)
    }
}

pub fn train_balanced_gnb(x: &Features, y: &[bool]) -> Result<GaussianNBModel> {
    check_training_input(x, y)?;
    let d = x.n_cols();
    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (row, &t) in x.rows().zip(y) {
        let c = usize::from(t);
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += v;
        }
    }
    for (c, name) in [(0, "negative"), (1, "positive")] {
        if counts[c] < 2 {
            return Err(if counts[c] == 0 {
                Error::MissingClass(name)
            } else {
                Error::InvalidInput(format!("{name} class needs at least 2 rows"))
            });
        }
        for m in &mut means[c] {
            *m /= counts[c] as f64;
        }
    }
    for (row, &t) in x.rows().zip(y) {
        let c = usize::from(t);
        for ((v, m), x) in variances[c].iter_mut().zip(&means[c]).zip(row) {
            *v += (x - m).powi(2);
        }
    }
    for c in 0..2 {
        for v in &mut variances[c] {
            *v /= counts[c] as f64;
        }
    }

    // floor at a fraction of the largest per-feature variance of the pooled data
    let n = y.len() as f64;
    let max_var = (0..d)
        .map(|k| {
            let mean = x.rows().map(|r| r[k]).sum::<f64>() / n;
            x.rows().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n
        })
        .fold(0.0, f64::max);
    let floor = (VAR_SMOOTHING * max_var).max(f64::MIN_POSITIVE);
    for var in variances.iter_mut().flatten() {
        *var = var.max(floor);
    }

    Ok(GaussianNBModel {
        kind: "gnb".into(),
        means,
        variances,
        class_prior: [0.5, 0.5],
        column_names: Vec::new(),
    })
}
