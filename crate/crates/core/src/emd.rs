//! Earthmover distance between distributions on the real line.
//!
//! On the line the distance is the L1 distance between quantile functions,
//! `d(P, Q) = int_0^1 |F_P^-1(u) - F_Q^-1(u)| du`. Quantile functions of
//! empirical distributions are step functions, so the integral is computed
//! exactly by walking the merged cumulative-weight breakpoints.
//!
//! Quantiles use the convention `F^-1(u) = inf { y : F(y) >= u }`.

use crate::error::{Error, Result};

const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    /// Cumulative weight up to and including each atom; last entry is 1.
    cumulative: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Uniform weights over `values`.
    pub fn uniform(values: &[f64]) -> Result<Self> {
        let n = values.len();
        Self::weighted(values, &vec![1.0 / n.max(1) as f64; n])
    }

    pub fn weighted(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if values.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: weights.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("values must be finite and weights nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE * values.len().max(1) as f64 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = pairs
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(EmpiricalDistribution {
            values: pairs.into_iter().map(|p| p.0).collect(),
            cumulative,
        })
    }

    /// Point mass at `value`.
    pub fn point(value: f64) -> Result<Self> {
        Self::uniform(&[value])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let w = c - prev;
                prev = c;
                w
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(self.weights()).map(|(v, w)| v * w).sum()
    }

    /// `inf { y : F(y) >= u }` for `u` in `(0, 1]`; `u <= 0` gives the minimum.
    pub fn quantile(&self, u: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c < u);
        self.values[idx.min(self.values.len() - 1)]
    }

    /// Cumulative-weight breakpoints, i.e. where the quantile function jumps.
    pub fn breakpoints(&self) -> &[f64] {
        &self.cumulative
    }
}

pub fn emd(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < p.values.len() && j < q.values.len() {
        let next = p.cumulative[i].min(q.cumulative[j]);
        total += (p.values[i] - q.values[j]).abs() * (next - prev);
        prev = next;
        if p.cumulative[i] <= next {
            i += 1;
        }
        if q.cumulative[j] <= next {
            j += 1;
        }
    }
    total
}

pub fn sum_emd_to(groups: &[EmpiricalDistribution], candidate: &EmpiricalDistribution) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InvalidInput("no groups".into()));
    }
    Ok(groups.iter().map(|g| emd(g, candidate)).sum())
}

/// Median of values; even counts take the mean of the two central ones.
pub fn value_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}

/// Distribution whose quantile function is the pointwise median of the
/// groups' quantile functions, evaluated exactly on the merged breakpoints.
pub fn quantile_median(groups: &[EmpiricalDistribution]) -> Result<EmpiricalDistribution> {
    if groups.is_empty() {
        return Err(Error::InvalidInput("no groups".into()));
    }
    let mut cuts: Vec<f64> = groups.iter().flat_map(|g| g.cumulative.iter().copied()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut values = Vec::with_capacity(cuts.len());
    let mut weights = Vec::with_capacity(cuts.len());
    let mut prev = 0.0;
    for &c in &cuts {
        if c <= prev {
            continue;
        }
        let mid = (prev + c) / 2.0;
        let mut at: Vec<f64> = groups.iter().map(|g| g.quantile(mid)).collect();
        values.push(value_median(&mut at));
        weights.push(c - prev);
        prev = c;
    }
    EmpiricalDistribution::weighted(&values, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uni(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::uniform(v).unwrap()
    }

    /// Minimum-cost perfect matching between equal-size samples, by
    /// enumerating permutations.
    fn brute_force_matching(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &mut Vec<f64>, k: usize, acc: f64, best: &mut f64) {
            if k == a.len() {
                *best = best.min(acc);
                return;
            }
            for i in k..b.len() {
                b.swap(k, i);
                go(a, b, k + 1, acc + (a[k] - b[k]).abs(), best);
                b.swap(k, i);
            }
        }
        let mut best = f64::INFINITY;
        go(a, &mut b.to_vec(), 0, 0.0, &mut best);
        best / a.len() as f64
    }

    fn riemann(p: &EmpiricalDistribution, q: &EmpiricalDistribution, steps: usize) -> f64 {
        (0..steps)
            .map(|k| {
                let u = (k as f64 + 0.5) / steps as f64;
                (p.quantile(u) - q.quantile(u)).abs()
            })
            .sum::<f64>()
            / steps as f64
    }

    #[test]
    fn examples() {
        let p = uni(&[0.0, 0.0, 3.0]);
        assert_eq!(emd(&p, &p), 0.0);
        assert_eq!(emd(&EmpiricalDistribution::point(0.0).unwrap(), &EmpiricalDistribution::point(-2.5).unwrap()), 2.5);
        let q = uni(&[1.0, 2.0, 3.0]);
        assert!((emd(&p, &q) - 1.0).abs() < 1e-15);
        assert!((brute_force_matching(&[0.0, 0.0, 3.0], &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_convention() {
        let p = uni(&[1.0, 2.0]);
        assert_eq!(p.quantile(0.5), 1.0);
        assert_eq!(p.quantile(0.500001), 2.0);
        assert_eq!(p.quantile(1.0), 2.0);
    }

    #[test]
    fn sum_to_median_of_point_masses() {
        let groups: Vec<_> = [0.0, 1.0, 10.0].iter().map(|&v| EmpiricalDistribution::point(v).unwrap()).collect();
        let at_median = sum_emd_to(&groups, &EmpiricalDistribution::point(1.0).unwrap()).unwrap();
        assert_eq!(at_median, 10.0);
        for k in -20..=120 {
            let c = EmpiricalDistribution::point(k as f64 / 10.0).unwrap();
            assert!(sum_emd_to(&groups, &c).unwrap() >= at_median);
        }
        assert!(sum_emd_to(&[], &groups[0]).is_err());
    }

    #[test]
    fn two_groups_sum_constant_on_geodesic() {
        let a = uni(&[0.0, 1.0, 4.0]);
        let b = uni(&[2.0, 2.0, 9.0]);
        let groups = [a.clone(), b.clone()];
        let direct = emd(&a, &b);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let path: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            let s = sum_emd_to(&groups, &uni(&path)).unwrap();
            assert!((s - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_and_errors() {
        let p = EmpiricalDistribution::weighted(&[0.0, 1.0], &[0.25, 0.75]).unwrap();
        let q = EmpiricalDistribution::point(0.0).unwrap();
        assert!((emd(&p, &q) - 0.75).abs() < 1e-15);
        assert!(EmpiricalDistribution::uniform(&[]).is_err());
        assert!(EmpiricalDistribution::weighted(&[0.0, 1.0], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn median_of_quantiles() {
        let m = quantile_median(&[uni(&[1.0, 2.0]), uni(&[3.0, 4.0]), uni(&[5.0, 6.0])]).unwrap();
        assert_eq!(m.values(), [3.0, 4.0]);
        let m = quantile_median(&[uni(&[0.0]), uni(&[0.0, 6.0])]).unwrap();
        assert_eq!(m.values(), [0.0, 3.0]);
    }

    fn dist() -> impl Strategy<Value = EmpiricalDistribution> {
        proptest::collection::vec(-50i32..50, 1..8)
            .prop_map(|v| uni(&v.iter().map(|&x| x as f64 / 4.0).collect::<Vec<_>>()))
    }

    /// Atom counts dividing 10^5, so every breakpoint sits on a grid edge.
    fn aligned_dist() -> impl Strategy<Value = EmpiricalDistribution> {
        proptest::sample::select(vec![1usize, 2, 4, 5, 8, 10]).prop_flat_map(|n| {
            proptest::collection::vec(-50i32..50, n)
                .prop_map(|v| uni(&v.iter().map(|&x| x as f64 / 4.0).collect::<Vec<_>>()))
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(p in dist(), q in dist(), r in dist()) {
            prop_assert_eq!(emd(&p, &q), emd(&q, &p));
            prop_assert!(emd(&p, &q) >= 0.0);
            prop_assert!(emd(&p, &r) <= emd(&p, &q) + emd(&q, &r) + 1e-12);
        }

        #[test]
        fn isometry_with_riemann_sum(p in aligned_dist(), q in aligned_dist()) {
            let diff = (emd(&p, &q) - riemann(&p, &q, 100_000)).abs();
            prop_assert!(diff <= 1e-6, "diff {}", diff);
        }

        #[test]
        fn matches_brute_force_matching(a in proptest::collection::vec(0i32..20, 1..6), seed in 0u64..1000) {
            let a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| (x * 7.0 + (i as f64) * 3.0 + seed as f64) % 17.0).collect();
            prop_assert!((emd(&uni(&a), &uni(&b)) - brute_force_matching(&a, &b)).abs() < 1e-12);
        }
    }
}
