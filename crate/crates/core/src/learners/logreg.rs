//! Class-balanced L2 logistic regression, solved by damped Newton steps.
//!
//! Objective: `1/2 |w|^2 + C sum_j (D_j / n) log(1 + exp(-y_j (<w, x_j> + b)))`
//! with the bias left unregularized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::{check_training_input, dot, signs, ClassWeights, Features, LinearKind, LinearModel, TrainedModel};

const GRADIENT_TOLERANCE: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone)]
pub struct LogregFit {
    pub model: LinearModel,
    pub objective_trace: Vec<f64>,
    pub gradient_norm: f64,
}

/// `log(1 + exp(-m))` without overflow.
fn softplus_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `1 / (1 + exp(m))`.
fn sigmoid_neg(m: f64) -> f64 {
    if m > 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

struct Problem<'a> {
    x: &'a Features,
    ys: Vec<f64>,
    /// `C D_j / n`
    scale: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(x: &'a Features, y: &[bool], cost: f64) -> Result<Self> {
        let d = ClassWeights::balanced(y)?;
        let n = y.len() as f64;
        Ok(Problem {
            x,
            ys: signs(y),
            scale: d.as_slice().iter().map(|dj| cost * dj / n).collect(),
        })
    }

    fn margins(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.x
            .rows()
            .zip(&self.ys)
            .map(|(r, s)| s * (dot(w, r) + b))
            .collect()
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let loss: f64 = self
            .margins(w, b)
            .iter()
            .zip(&self.scale)
            .map(|(&m, c)| c * softplus_neg(m))
            .sum();
        0.5 * dot(w, w) + loss
    }

    /// Gradient over `(w, b)`, bias last.
    fn gradient(&self, w: &[f64], b: f64) -> Vec<f64> {
        let d = w.len();
        let mut g = w.to_vec();
        g.push(0.0);
        for ((row, s), (m, c)) in self
            .x
            .rows()
            .zip(&self.ys)
            .zip(self.margins(w, b).iter().zip(&self.scale))
        {
            let coef = -c * sigmoid_neg(*m) * s;
            for k in 0..d {
                g[k] += coef * row[k];
            }
            g[d] += coef;
        }
        g
    }

    fn hessian(&self, w: &[f64], b: f64) -> DMatrix<f64> {
        let d = w.len();
        let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
        for k in 0..d {
            h[(k, k)] = 1.0;
        }
        let mut xt = vec![0.0; d + 1];
        for (row, (m, c)) in self.x.rows().zip(self.margins(w, b).iter().zip(&self.scale)) {
            let p = sigmoid_neg(*m);
            let curv = c * p * (1.0 - p);
            if curv == 0.0 {
                continue;
            }
            xt[..d].copy_from_slice(row);
            xt[d] = 1.0;
            for r in 0..=d {
                for q in 0..=d {
                    h[(r, q)] += curv * xt[r] * xt[q];
                }
            }
        }
        h
    }
}

pub fn logreg_objective(x: &Features, y: &[bool], cost: f64, weights: &[f64], bias: f64) -> Result<f64> {
    Ok(Problem::new(x, y, cost)?.objective(weights, bias))
}

/// Analytic gradient with respect to `(w, b)`, bias last.
pub fn logreg_gradient(x: &Features, y: &[bool], cost: f64, weights: &[f64], bias: f64) -> Result<Vec<f64>> {
    Ok(Problem::new(x, y, cost)?.gradient(weights, bias))
}

pub fn train_balanced_logreg(x: &Features, y: &[bool], cost: f64) -> Result<LinearModel> {
    fit_logreg(x, y, cost).map(|f| f.model)
}

pub(crate) fn fit_logreg(x: &Features, y: &[bool], cost: f64) -> Result<LogregFit> {
    check_training_input(x, y)?;
    if !(cost > 0.0 && cost.is_finite()) {
        return Err(Error::InvalidInput(format!("cost must be positive, got {cost}")));
    }
    let problem = Problem::new(x, y, cost)?;
    let d = x.n_cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = problem.objective(&w, b);
    let mut trace = vec![f];
    let g0 = norm(&problem.gradient(&w, b)).max(1.0);

    for _ in 0..MAX_ITERATIONS {
        let g = problem.gradient(&w, b);
        let gnorm = norm(&g);
        if gnorm <= GRADIENT_TOLERANCE * g0 {
            return Ok(finish(w, b, cost, trace, gnorm));
        }
        let step = newton_direction(problem.hessian(&w, b), &g);
        let slope = dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let w_new: Vec<f64> = w.iter().zip(&step).map(|(wk, s)| wk - t * s).collect();
            let b_new = b - t * step[d];
            let f_new = problem.objective(&w_new, b_new);
            if f_new <= f - 1e-4 * t * slope {
                w = w_new;
                b = b_new;
                f = f_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        trace.push(f);
        if !accepted {
            // no further decrease representable in floating point
            let gnorm = norm(&problem.gradient(&w, b));
            return Ok(finish(w, b, cost, trace, gnorm));
        }
    }
    let gnorm = norm(&problem.gradient(&w, b));
    if gnorm <= GRADIENT_TOLERANCE * g0 {
        return Ok(finish(w, b, cost, trace, gnorm));
    }
    Err(Error::NotConverged {
        iterations: MAX_ITERATIONS,
        best: Box::new(TrainedModel::Linear(finish(w, b, cost, trace, gnorm).model)),
    })
}

fn finish(w: Vec<f64>, b: f64, cost: f64, trace: Vec<f64>, gnorm: f64) -> LogregFit {
    LogregFit {
        model: LinearModel {
            kind: LinearKind::Logreg,
            weights: w,
            bias: b,
            cost,
            column_names: Vec::new(),
        },
        objective_trace: trace,
        gradient_norm: gnorm,
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Solves `H s = g`; falls back to a ridge-damped system when `H` is
/// numerically singular (flat bias direction).
fn newton_direction(h: DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let rhs = DVector::from_column_slice(g);
    let mut ridge = 0.0;
    loop {
        let mut m = h.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            return chol.solve(&rhs).iter().copied().collect();
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 10.0 };
    }
}
