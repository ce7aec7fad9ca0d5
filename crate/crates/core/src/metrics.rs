//! Confusion-matrix statistics: disparate impact, balanced error rate,
//! utility and the Zemel fairness score.
//!
//! Outcomes are `bool` with `true` = YES. Protected labels are `bool` with
//! `false` = X=0 (minority) and `true` = X=1 (default/majority).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::GroupKey;
use crate::error::{Error, Result};

/// Counts of (outcome, group): `a` = (NO, X=0), `b` = (NO, X=1),
/// `c` = (YES, X=0), `d` = (YES, X=1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionRates {
    pub sensitivity: f64,
    pub specificity: f64,
    pub alpha: f64,
    pub beta_rate: f64,
    pub pi0: f64,
    pub pi1: f64,
}

impl ConfusionMatrix {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Result<Self> {
        if a + b + c + d == 0 {
            return Err(Error::InvalidInput("empty confusion matrix".into()));
        }
        Ok(ConfusionMatrix { a, b, c, d })
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn scaled(&self, k: u64) -> Self {
        ConfusionMatrix {
            a: self.a * k,
            b: self.b * k,
            c: self.c * k,
            d: self.d * k,
        }
    }

    /// Exchanges the roles of X=0 and X=1.
    pub fn swap_groups(&self) -> Self {
        ConfusionMatrix {
            a: self.b,
            b: self.a,
            c: self.d,
            d: self.c,
        }
    }

    fn check_groups(&self) -> Result<()> {
        if self.a + self.c == 0 {
            return Err(Error::EmptyGroup("X=0".into()));
        }
        if self.b + self.d == 0 {
            return Err(Error::EmptyGroup("X=1".into()));
        }
        Ok(())
    }

    pub fn rates(&self) -> Result<ConfusionRates> {
        self.check_groups()?;
        let (a, b, c, d) = (self.a as f64, self.b as f64, self.c as f64, self.d as f64);
        let alpha = b / (b + d);
        let beta_rate = c / (a + c);
        Ok(ConfusionRates {
            sensitivity: d / (b + d),
            specificity: a / (a + c),
            alpha,
            beta_rate,
            pi0: beta_rate,
            pi1: 1.0 - alpha,
        })
    }

    /// Expands the matrix into per-row `(outcome, group)` vectors.
    pub fn expand(&self) -> (Vec<bool>, Vec<bool>) {
        let mut outcomes = Vec::with_capacity(self.total() as usize);
        let mut groups = Vec::with_capacity(self.total() as usize);
        for (count, outcome, group) in [
            (self.a, false, false),
            (self.b, false, true),
            (self.c, true, false),
            (self.d, true, true),
        ] {
            for _ in 0..count {
                outcomes.push(outcome);
                groups.push(group);
            }
        }
        (outcomes, groups)
    }
}

pub fn confusion(outcomes: &[bool], groups: &[bool]) -> Result<ConfusionMatrix> {
    if outcomes.len() != groups.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: groups.len(),
        });
    }
    let mut m = ConfusionMatrix {
        a: 0,
        b: 0,
        c: 0,
        d: 0,
    };
    for (&yes, &majority) in outcomes.iter().zip(groups) {
        match (yes, majority) {
            (false, false) => m.a += 1,
            (false, true) => m.b += 1,
            (true, false) => m.c += 1,
            (true, true) => m.d += 1,
        }
    }
    if m.total() == 0 {
        return Err(Error::InvalidInput("no rows".into()));
    }
    Ok(m)
}

/// Ratio of selection rates, minority over majority, with its reciprocal
/// LR+. Either may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DIValue {
    pub value: f64,
    pub lr_plus: f64,
}

impl DIValue {
    /// `DI <= tau`, the condition for disparate impact.
    pub fn has_disparate_impact(&self, tau: f64) -> bool {
        self.value <= tau
    }

    /// DI above 1: the minority is selected at a higher rate.
    pub fn unfair_to_majority(&self) -> bool {
        self.value > 1.0
    }

    /// `min(DI, 1/DI)`.
    pub fn two_sided(&self) -> f64 {
        self.value.min(self.lr_plus)
    }
}

pub fn disparate_impact(m: &ConfusionMatrix) -> Result<DIValue> {
    m.check_groups()?;
    if m.c == 0 && m.d == 0 {
        return Err(Error::UndefinedDisparateImpact);
    }
    let minority_rate = m.c as f64 / (m.a + m.c) as f64;
    let majority_rate = m.d as f64 / (m.b + m.d) as f64;
    if m.d == 0 {
        return Ok(DIValue {
            value: f64::INFINITY,
            lr_plus: 0.0,
        });
    }
    if m.c == 0 {
        return Ok(DIValue {
            value: 0.0,
            lr_plus: f64::INFINITY,
        });
    }
    Ok(DIValue {
        value: minority_rate / majority_rate,
        lr_plus: majority_rate / minority_rate,
    })
}

/// Mean of the two class-conditional error rates of `predicted` against
/// `actual`: `(Pr[f=0 | actual=1] + Pr[f=1 | actual=0]) / 2`.
pub fn ber(predicted: &[bool], actual: &[bool]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    let (mut pos, mut neg, mut false_neg, mut false_pos) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &a) in predicted.iter().zip(actual) {
        if a {
            pos += 1;
            false_neg += u64::from(!p);
        } else {
            neg += 1;
            false_pos += u64::from(p);
        }
    }
    if pos == 0 {
        return Err(Error::MissingClass("positive"));
    }
    if neg == 0 {
        return Err(Error::MissingClass("negative"));
    }
    Ok((false_neg as f64 / pos as f64 + false_pos as f64 / neg as f64) / 2.0)
}

pub fn utility(predicted: &[bool], actual: &[bool]) -> Result<f64> {
    Ok(1.0 - ber(predicted, actual)?)
}

pub fn accuracy(predicted: &[bool], actual: &[bool]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::InvalidInput("no rows".into()));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// `2 * BER` of the outcomes read as predictions of the group.
pub fn zemel_fairness(outcomes: &[bool], groups: &[bool]) -> Result<f64> {
    Ok(2.0 * ber(&crate::certify::purely_biased(outcomes), groups)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupDI {
    pub group: GroupKey,
    pub di: DIValue,
}

/// DI of every protected subgroup against the pooled unprotected
/// (advantaged) rows. For joint keys a subgroup is protected if any of its
/// components is a minority value.
pub fn subgroup_disparate_impact(
    outcomes: &[bool],
    keys: &[GroupKey],
    is_protected: impl Fn(&GroupKey) -> bool,
) -> Result<Vec<SubgroupDI>> {
    if outcomes.len() != keys.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: keys.len(),
        });
    }
    let mut reference = (0u64, 0u64);
    let mut groups: BTreeMap<&GroupKey, (u64, u64)> = BTreeMap::new();
    for (&yes, key) in outcomes.iter().zip(keys) {
        let slot = if is_protected(key) {
            groups.entry(key).or_default()
        } else {
            &mut reference
        };
        if yes {
            slot.1 += 1;
        } else {
            slot.0 += 1;
        }
    }
    if reference.0 + reference.1 == 0 {
        return Err(Error::EmptyGroup("advantaged".into()));
    }
    if groups.is_empty() {
        return Err(Error::EmptyGroup("protected".into()));
    }
    groups
        .into_iter()
        .map(|(key, (no, yes))| {
            let m = ConfusionMatrix::new(no, reference.0, yes, reference.1)?;
            Ok(SubgroupDI {
                group: key.clone(),
                di: disparate_impact(&m)?,
            })
        })
        .collect()
}

pub fn average_di(subgroups: &[SubgroupDI]) -> f64 {
    subgroups.iter().map(|s| s.di.value).sum::<f64>() / subgroups.len() as f64
}
