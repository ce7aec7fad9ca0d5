use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::ber;

use super::{fit, predict, Features, LearnerKind, TrainedModel};

/// `count` costs log-uniformly spaced on `[lo, hi]`.
pub fn cost_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == count - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVPlan {
    pub folds: usize,
    pub cost_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CVPlan {
    fn default() -> Self {
        CVPlan {
            folds: 3,
            cost_grid: cost_grid(1e-3, 1e3, 13),
            seed: 42,
        }
    }
}

impl CVPlan {
    pub fn with_seed(seed: u64) -> Self {
        CVPlan {
            seed,
            ..CVPlan::default()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CVOutcome {
    #[serde(skip)]
    pub model: TrainedModel,
    /// `None` for learners without a cost parameter.
    pub best_cost: Option<f64>,
    /// Mean validation BER per grid cost.
    pub mean_bers: Vec<f64>,
    /// `fold_bers[cost][fold]`.
    pub fold_bers: Vec<Vec<f64>>,
}

/// Fold id per row. Each class is shuffled with the seed and dealt
/// round-robin, so every fold keeps the class proportions.
pub fn stratified_folds(y: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidInput("need at least 2 folds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    for (class, name) in [(false, "negative"), (true, "positive")] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < folds {
            return Err(Error::InvalidInput(format!(
                "{name} class has {} rows; every one of {folds} folds needs both classes",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    Ok(assignment)
}

/// Grid search on mean validation BER over stratified folds, then a refit
/// on all rows at the winning cost. Ties go to the smaller cost.
pub fn cross_validate(kind: LearnerKind, x: &Features, y: &[bool], plan: &CVPlan) -> Result<CVOutcome> {
    if plan.cost_grid.is_empty() {
        return Err(Error::InvalidInput("empty cost grid".into()));
    }
    let assignment = stratified_folds(y, plan.folds, plan.seed)?;
    let splits: Vec<(Features, Vec<bool>, Features, Vec<bool>)> = (0..plan.folds)
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != f).collect();
            let valid: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == f).collect();
            (
                x.subset(&train),
                train.iter().map(|&i| y[i]).collect(),
                x.subset(&valid),
                valid.iter().map(|&i| y[i]).collect(),
            )
        })
        .collect();

    let grid: Vec<f64> = if kind.uses_cost() {
        plan.cost_grid.clone()
    } else {
        vec![plan.cost_grid[0]]
    };
    let fold_bers: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&cost| {
            splits
                .iter()
                .map(|(xt, yt, xv, yv)| {
                    let model = fit(kind, xt, yt, cost)?;
                    ber(&predict(&model, xv)?, yv)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mean_bers: Vec<f64> = fold_bers
        .iter()
        .map(|b| b.iter().sum::<f64>() / b.len() as f64)
        .collect();

    let mut best = 0;
    for (i, &m) in mean_bers.iter().enumerate() {
        if m < mean_bers[best] {
            best = i;
        }
    }
    let model = fit(kind, x, y, grid[best])?;
    Ok(CVOutcome {
        model,
        best_cost: kind.uses_cost().then_some(grid[best]),
        mean_bers,
        fold_bers,
    })
}
