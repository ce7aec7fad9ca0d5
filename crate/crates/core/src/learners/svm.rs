//! Class-weighted hinge-loss linear SVM.
//!
//! Minimizes `1/2 |w|^2 + (C/n) sum_j D_j max(0, 1 - y_j (<w, x_j> + b))`
//! with an unregularized bias. The solver works on the dual
//!
//! ```text
//! min_a  1/2 a'Qa - sum_j a_j   s.t.  0 <= a_j <= C D_j / n,  sum_j y_j a_j = 0
//! ```
//!
//! by sequential minimal optimization with second-order working-set
//! selection. `w = sum_j a_j y_j x_j` is kept explicitly, so each step costs
//! `O(n d)`. No randomness is involved.

use crate::error::{Error, Result};

use super::{check_training_input, dot, signs, ClassWeights, Features, LinearKind, LinearModel, TrainedModel};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    /// Stop when the relative duality gap falls below this.
    pub relative_gap: f64,
    /// Stop when the maximal KKT violation falls below this.
    pub violation: f64,
    pub max_iterations: usize,
    /// Record the dual objective after every step.
    pub record_trace: bool,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            relative_gap: 1e-6,
            violation: 1e-9,
            max_iterations: 100_000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: LinearModel,
    pub primal_objective: f64,
    /// Dual objective value; a lower bound on the primal optimum.
    pub dual_objective: f64,
    pub iterations: usize,
    pub dual_trace: Vec<f64>,
}

impl SvmFit {
    pub fn relative_gap(&self) -> f64 {
        (self.primal_objective - self.dual_objective) / self.primal_objective.abs().max(f64::MIN_POSITIVE)
    }
}

/// Primal objective at `(w, b)`.
pub fn svm_objective(x: &Features, y: &[bool], cost: f64, weights: &[f64], bias: f64) -> Result<f64> {
    let d = ClassWeights::balanced(y)?;
    let n = y.len() as f64;
    let loss: f64 = x
        .rows()
        .zip(signs(y))
        .zip(d.as_slice())
        .map(|((row, s), dj)| dj * (1.0 - s * (dot(weights, row) + bias)).max(0.0))
        .sum();
    Ok(0.5 * dot(weights, weights) + cost / n * loss)
}

pub fn train_weighted_svm(x: &Features, y: &[bool], cost: f64) -> Result<LinearModel> {
    train_weighted_svm_with(x, y, cost, &SvmOptions::default()).map(|fit| fit.model)
}

pub fn train_weighted_svm_with(x: &Features, y: &[bool], cost: f64, opts: &SvmOptions) -> Result<SvmFit> {
    check_training_input(x, y)?;
    if !(cost > 0.0 && cost.is_finite()) {
        return Err(Error::InvalidInput(format!("cost must be positive, got {cost}")));
    }
    let weights = ClassWeights::balanced(y)?;
    let n = x.n_rows();
    let dim = x.n_cols();
    let ys = signs(y);
    let upper: Vec<f64> = weights.as_slice().iter().map(|dj| cost * dj / n as f64).collect();
    let diag: Vec<f64> = x.rows().map(|r| dot(r, r)).collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut w = vec![0.0; dim];
    let mut alpha_sum = 0.0;
    let mut trace = Vec::new();
    let check_every = n.max(16);

    let mut iterations = 0;
    let converged = loop {
        let Some((i, j, violation)) = select_pair(&ys, &alpha, &upper, &grad, &diag, x) else {
            break true;
        };
        if violation < opts.violation {
            break true;
        }
        if iterations % check_every == 0 && iterations > 0 {
            let b = bias(&ys, &alpha, &upper, &grad);
            let primal = primal_value(x, &ys, &upper, &w, b);
            let dual = alpha_sum - 0.5 * dot(&w, &w);
            if (primal - dual) <= opts.relative_gap * primal.abs().max(f64::MIN_POSITIVE) {
                break true;
            }
        }
        if iterations >= opts.max_iterations {
            break false;
        }

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kij = dot(x.row(i), x.row(j));
        update_pair(&mut alpha, i, j, &ys, &upper, &grad, &diag, kij);
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        alpha_sum += di + dj;

        let mut delta_w = vec![0.0; dim];
        for (k, dw) in delta_w.iter_mut().enumerate() {
            *dw = di * ys[i] * x.row(i)[k] + dj * ys[j] * x.row(j)[k];
        }
        for (wk, dw) in w.iter_mut().zip(&delta_w) {
            *wk += dw;
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += ys[t] * dot(x.row(t), &delta_w);
        }
        if opts.record_trace {
            trace.push(0.5 * dot(&w, &w) - alpha_sum);
        }
        iterations += 1;
    };

    let b = bias(&ys, &alpha, &upper, &grad);
    let fit = SvmFit {
        primal_objective: primal_value(x, &ys, &upper, &w, b),
        dual_objective: alpha_sum - 0.5 * dot(&w, &w),
        model: LinearModel {
            kind: LinearKind::Svm,
            weights: w,
            bias: b,
            cost,
            column_names: Vec::new(),
        },
        iterations,
        dual_trace: trace,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged {
            iterations,
            best: Box::new(TrainedModel::Linear(fit.model)),
        })
    }
}

/// Primal objective with `C D_j / n` folded into `upper`.
fn primal_value(x: &Features, ys: &[f64], upper: &[f64], w: &[f64], b: f64) -> f64 {
    let loss: f64 = x
        .rows()
        .zip(ys)
        .zip(upper)
        .map(|((row, s), u)| u * (1.0 - s * (dot(w, row) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + loss
}

fn in_up(y: f64, a: f64, u: f64) -> bool {
    (y > 0.0 && a < u) || (y < 0.0 && a > 0.0)
}

fn in_low(y: f64, a: f64, u: f64) -> bool {
    (y > 0.0 && a > 0.0) || (y < 0.0 && a < u)
}

/// Maximal-violating `i` and second-order `j`; returns the KKT violation.
fn select_pair(
    ys: &[f64],
    alpha: &[f64],
    upper: &[f64],
    grad: &[f64],
    diag: &[f64],
    x: &Features,
) -> Option<(usize, usize, f64)> {
    let mut gmax = f64::NEG_INFINITY;
    let mut i = None;
    for t in 0..ys.len() {
        if in_up(ys[t], alpha[t], upper[t]) {
            let v = -ys[t] * grad[t];
            if v >= gmax {
                gmax = v;
                i = Some(t);
            }
        }
    }
    let i = i?;
    let xi = x.row(i);

    let mut gmax2 = f64::NEG_INFINITY;
    let mut best = None;
    let mut best_obj = f64::INFINITY;
    for t in 0..ys.len() {
        if !in_low(ys[t], alpha[t], upper[t]) {
            continue;
        }
        let v = ys[t] * grad[t];
        if v >= gmax2 {
            gmax2 = v;
        }
        let grad_diff = gmax + v;
        if grad_diff > 0.0 {
            let quad = (diag[i] + diag[t] - 2.0 * dot(xi, x.row(t))).max(TAU);
            let obj = -grad_diff * grad_diff / quad;
            if obj <= best_obj {
                best_obj = obj;
                best = Some(t);
            }
        }
    }
    let violation = gmax + gmax2;
    Some((i, best.unwrap_or(i), violation))
}

#[allow(clippy::too_many_arguments)]
fn update_pair(
    alpha: &mut [f64],
    i: usize,
    j: usize,
    ys: &[f64],
    upper: &[f64],
    grad: &[f64],
    diag: &[f64],
    kij: f64,
) {
    let (ci, cj) = (upper[i], upper[j]);
    // Q_ij = y_i y_j K_ij
    let qij = ys[i] * ys[j] * kij;
    if ys[i] != ys[j] {
        let quad = (diag[i] + diag[j] + 2.0 * qij).max(TAU);
        let delta = (-grad[i] - grad[j]) / quad;
        let diff = alpha[i] - alpha[j];
        alpha[i] += delta;
        alpha[j] += delta;
        if diff > 0.0 {
            if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = diff;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = -diff;
        }
        if diff > ci - cj {
            if alpha[i] > ci {
                alpha[i] = ci;
                alpha[j] = ci - diff;
            }
        } else if alpha[j] > cj {
            alpha[j] = cj;
            alpha[i] = cj + diff;
        }
    } else {
        let quad = (diag[i] + diag[j] - 2.0 * qij).max(TAU);
        let delta = (grad[i] - grad[j]) / quad;
        let sum = alpha[i] + alpha[j];
        alpha[i] -= delta;
        alpha[j] += delta;
        if sum > ci {
            if alpha[i] > ci {
                alpha[i] = ci;
                alpha[j] = sum - ci;
            }
        } else if alpha[j] < 0.0 {
            alpha[j] = 0.0;
            alpha[i] = sum;
        }
        if sum > cj {
            if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = sum - cj;
            }
        } else if alpha[i] < 0.0 {
            alpha[i] = 0.0;
            alpha[j] = sum;
        }
    }
}

/// Bias from the free support vectors, or the midpoint of the feasible
/// interval when none are free.
fn bias(ys: &[f64], alpha: &[f64], upper: &[f64], grad: &[f64]) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..ys.len() {
        let yg = ys[t] * grad[t];
        if alpha[t] >= upper[t] {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    -rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::predict;
    use crate::metrics::ber;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_2d(n: usize, seed: u64) -> (Features, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 5 == 0;
            let shift = if pos { 0.6 } else { 0.4 };
            rows.push(vec![shift + rng.gen_range(-0.3..0.3), rng.gen_range(0.0..1.0)]);
            y.push(pos);
        }
        (Features::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn separable_1d() {
        let x = Features::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let y = [false, true];
        let m = train_weighted_svm(&x, &y, 1000.0).unwrap();
        let pred = predict(&TrainedModel::Linear(m), &x).unwrap();
        assert_eq!(ber(&pred, &y).unwrap(), 0.0);
    }

    #[test]
    fn objective_below_origin_and_gap_small() {
        let (x, y) = noisy_2d(200, 3);
        for cost in [0.01, 1.0, 100.0] {
            let fit = train_weighted_svm_with(&x, &y, cost, &SvmOptions::default()).unwrap();
            let at_origin = svm_objective(&x, &y, cost, &[0.0, 0.0], 0.0).unwrap();
            assert!((at_origin - cost).abs() < 1e-12);
            let obj = svm_objective(&x, &y, cost, &fit.model.weights, fit.model.bias).unwrap();
            assert!(obj <= at_origin + 1e-12, "cost {cost}: {obj} > {at_origin}");
            assert!((obj - fit.primal_objective).abs() < 1e-9 * obj.max(1.0));
            assert!(fit.relative_gap() <= 1e-6, "cost {cost}: gap {}", fit.relative_gap());
        }
    }

    #[test]
    fn dual_objective_monotone() {
        let (x, y) = noisy_2d(120, 9);
        let opts = SvmOptions {
            record_trace: true,
            ..SvmOptions::default()
        };
        let fit = train_weighted_svm_with(&x, &y, 10.0, &opts).unwrap();
        assert!(!fit.dual_trace.is_empty());
        for pair in fit.dual_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn convexity_midpoint() {
        let (x, y) = noisy_2d(80, 4);
        let f = |w: &[f64], b: f64| svm_objective(&x, &y, 5.0, w, b).unwrap();
        let (w1, b1) = ([0.3, -2.0], 0.7);
        let (w2, b2) = ([-1.5, 0.4], -0.2);
        let mid = [(w1[0] + w2[0]) / 2.0, (w1[1] + w2[1]) / 2.0];
        assert!(f(&mid, (b1 + b2) / 2.0) <= (f(&w1, b1) + f(&w2, b2)) / 2.0 + 1e-12);
    }

    #[test]
    fn deterministic() {
        let (x, y) = noisy_2d(150, 11);
        let a = train_weighted_svm(&x, &y, 3.0).unwrap();
        let b = train_weighted_svm(&x, &y, 3.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let x = Features::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            train_weighted_svm(&x, &[true, true], 1.0),
            Err(Error::MissingClass(_))
        ));
        assert!(train_weighted_svm(&x, &[true, false], 0.0).is_err());
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let (x, y) = noisy_2d(200, 5);
        let opts = SvmOptions {
            max_iterations: 3,
            ..SvmOptions::default()
        };
        match train_weighted_svm_with(&x, &y, 100.0, &opts) {
            Err(Error::NotConverged { iterations, best }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best.width(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
