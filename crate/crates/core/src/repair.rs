//! Per-attribute quantile repair.
//!
//! For one attribute, every group's sorted values are cut into `B` quantile
//! buckets, `B` being the size of the smallest group, and each bucket is
//! represented by its median. The repair target at bucket `u` is the median
//! over groups of the representatives at `u`. Rows are then moved, bucket by
//! bucket, fully onto the target (full repair), part of the way in value
//! space (geometric) or part of the way in rank space among the observed
//! representatives at that bucket (combinatorial).
//!
//! Repairs act on bucket representatives: a repaired row takes a value that
//! depends only on its group and bucket.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupKey};
use crate::emd::value_median;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupQuantiles {
    pub key: GroupKey,
    /// Nondecreasing bucket medians, length `B`.
    pub representatives: Vec<f64>,
    /// `(row, bucket)` for every member, in ascending value order.
    pub assignment: Vec<(usize, usize)>,
    /// Largest member value in each bucket.
    bucket_max: Vec<f64>,
}

impl GroupQuantiles {
    pub fn bucket_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.representatives.len()];
        for &(_, b) in &self.assignment {
            sizes[b] += 1;
        }
        sizes
    }

    /// Bucket for a value not used to fit the model: the first bucket whose
    /// largest member is at least `value`.
    pub fn bucket_of(&self, value: f64) -> usize {
        self.bucket_max
            .partition_point(|&m| m < value)
            .min(self.representatives.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    pub attribute: String,
    pub bucket_count: usize,
    /// Sorted by group key.
    pub groups: Vec<GroupQuantiles>,
}

impl QuantileModel {
    pub fn group(&self, key: &GroupKey) -> Option<&GroupQuantiles> {
        self.groups.iter().find(|g| &g.key == key)
    }

    pub fn representative_table(&self) -> Vec<Vec<f64>> {
        self.groups.iter().map(|g| g.representatives.clone()).collect()
    }
}

/// Buckets every group's values. `values_by_group` maps a group key to
/// `(row, value)` pairs.
pub fn build_quantile_model(
    attribute: &str,
    values_by_group: &BTreeMap<GroupKey, Vec<(usize, f64)>>,
) -> Result<QuantileModel> {
    if values_by_group.is_empty() {
        return Err(Error::InvalidInput("no groups to repair".into()));
    }
    if let Some((key, _)) = values_by_group.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyGroup(key.to_string()));
    }
    let bucket_count = values_by_group.values().map(Vec::len).min().expect("nonempty");

    let groups = values_by_group
        .iter()
        .map(|(key, members)| {
            let mut sorted = members.clone();
            sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let (q, r) = (sorted.len() / bucket_count, sorted.len() % bucket_count);
            let mut representatives = Vec::with_capacity(bucket_count);
            let mut bucket_max = Vec::with_capacity(bucket_count);
            let mut assignment = Vec::with_capacity(sorted.len());
            let mut start = 0;
            for b in 0..bucket_count {
                let size = q + usize::from(b < r);
                let bucket = &sorted[start..start + size];
                let mut values: Vec<f64> = bucket.iter().map(|m| m.1).collect();
                bucket_max.push(values[values.len() - 1]);
                representatives.push(value_median(&mut values));
                assignment.extend(bucket.iter().map(|m| (m.0, b)));
                start += size;
            }
            GroupQuantiles {
                key: key.clone(),
                representatives,
                assignment,
                bucket_max,
            }
        })
        .collect();

    Ok(QuantileModel {
        attribute: attribute.to_string(),
        bucket_count,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianTarget {
    pub representatives: Vec<f64>,
}

/// Coordinatewise median of the group representatives.
pub fn median_target(model: &QuantileModel) -> MedianTarget {
    let representatives = (0..model.bucket_count)
        .map(|u| {
            let mut at: Vec<f64> = model.groups.iter().map(|g| g.representatives[u]).collect();
            value_median(&mut at)
        })
        .collect();
    MedianTarget { representatives }
}

/// The representatives of every group at bucket `u`, ascending, with ties
/// broken by group key.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSlice {
    /// `(value, group position in the model)`.
    entries: Vec<(f64, usize)>,
}

impl RankSlice {
    pub fn at(model: &QuantileModel, u: usize) -> Self {
        let mut entries: Vec<(f64, usize)> = model
            .groups
            .iter()
            .enumerate()
            .map(|(g, q)| (q.representatives[u], g))
            .collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        RankSlice { entries }
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position of a group within the slice.
    pub fn rank_of(&self, group: usize) -> usize {
        self.entries.iter().position(|e| e.1 == group).expect("group in slice")
    }

    /// Value at a given rank (the inverse cumulant lookup).
    pub fn value_at(&self, rank: usize) -> f64 {
        self.entries[rank].0
    }

    /// Lower-median rank `floor((k - 1) / 2)`.
    pub fn median_rank(&self) -> usize {
        (self.entries.len() - 1) / 2
    }
}

/// Repaired value per `(group, bucket)`; `table[g][u]`.
pub type RepairTable = Vec<Vec<f64>>;

pub fn full_repair_table(model: &QuantileModel, target: &MedianTarget) -> Result<RepairTable> {
    check_target(model, target)?;
    Ok(vec![target.representatives.clone(); model.groups.len()])
}

pub fn geometric_repair_table(model: &QuantileModel, target: &MedianTarget, lambda: f64) -> Result<RepairTable> {
    check_target(model, target)?;
    check_lambda(lambda)?;
    Ok(model
        .groups
        .iter()
        .map(|g| {
            g.representatives
                .iter()
                .zip(&target.representatives)
                .map(|(&rep, &t)| {
                    if lambda == 1.0 {
                        t
                    } else {
                        (1.0 - lambda) * rep + lambda * t
                    }
                })
                .collect()
        })
        .collect())
}

pub fn combinatorial_repair_table(model: &QuantileModel, lambda: f64) -> Result<RepairTable> {
    check_lambda(lambda)?;
    let mut table = vec![vec![0.0; model.bucket_count]; model.groups.len()];
    for u in 0..model.bucket_count {
        let slice = RankSlice::at(model, u);
        let m = slice.median_rank() as f64;
        for (g, row) in table.iter_mut().enumerate() {
            let rho = slice.rank_of(g) as f64;
            // round half up; the small offset absorbs error in lambda grids like 0.1 * k
            let target_rank = ((1.0 - lambda) * rho + lambda * m + 0.5 + 1e-9).floor() as usize;
            row[u] = slice.value_at(target_rank.min(slice.len() - 1));
        }
    }
    Ok(table)
}

fn check_target(model: &QuantileModel, target: &MedianTarget) -> Result<()> {
    if target.representatives.len() != model.bucket_count {
        return Err(Error::LengthMismatch {
            left: model.bucket_count,
            right: target.representatives.len(),
        });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")))
    }
}

/// `(row, repaired value)` for every member of every group.
pub fn apply_table(model: &QuantileModel, table: &RepairTable) -> Vec<(usize, f64)> {
    model
        .groups
        .iter()
        .zip(table)
        .flat_map(|(g, values)| g.assignment.iter().map(move |&(row, b)| (row, values[b])))
        .collect()
}

pub fn full_repair(model: &QuantileModel, target: &MedianTarget) -> Result<Vec<(usize, f64)>> {
    Ok(apply_table(model, &full_repair_table(model, target)?))
}

pub fn geometric_partial_repair(model: &QuantileModel, target: &MedianTarget, lambda: f64) -> Result<Vec<(usize, f64)>> {
    Ok(apply_table(model, &geometric_repair_table(model, target, lambda)?))
}

pub fn combinatorial_partial_repair(model: &QuantileModel, lambda: f64) -> Result<Vec<(usize, f64)>> {
    Ok(apply_table(model, &combinatorial_repair_table(model, lambda)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepairMode {
    Full,
    Combinatorial,
    Geometric,
}

impl RepairMode {
    pub fn name(&self) -> &'static str {
        match self {
            RepairMode::Full => "full",
            RepairMode::Combinatorial => "combinatorial",
            RepairMode::Geometric => "geometric",
        }
    }
}

impl fmt::Display for RepairMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RepairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(RepairMode::Full),
            "combinatorial" => Ok(RepairMode::Combinatorial),
            "geometric" => Ok(RepairMode::Geometric),
            other => Err(Error::InvalidInput(format!("unknown repair mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairPlan {
    pub mode: RepairMode,
    pub lambda: f64,
    pub stratify_columns: Vec<String>,
    /// Rows used to build the quantile buckets; `None` uses every row.
    /// Other rows are placed into buckets by value.
    pub fit_rows: Option<Vec<usize>>,
}

impl RepairPlan {
    pub fn new(mode: RepairMode, lambda: f64, stratify_columns: Vec<String>) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(RepairPlan {
            mode,
            lambda: if mode == RepairMode::Full { 1.0 } else { lambda },
            stratify_columns,
            fit_rows: None,
        })
    }

    pub fn full(stratify_columns: Vec<String>) -> Self {
        RepairPlan {
            mode: RepairMode::Full,
            lambda: 1.0,
            stratify_columns,
            fit_rows: None,
        }
    }

    pub fn fit_on(mut self, rows: Vec<usize>) -> Self {
        self.fit_rows = Some(rows);
        self
    }

    fn table(&self, model: &QuantileModel) -> Result<RepairTable> {
        match self.mode {
            RepairMode::Full => full_repair_table(model, &median_target(model)),
            RepairMode::Geometric => geometric_repair_table(model, &median_target(model), self.lambda),
            RepairMode::Combinatorial => combinatorial_repair_table(model, self.lambda),
        }
    }
}

/// Repairs every attribute of `data` independently. Keys and labels are
/// untouched.
pub fn repair_dataset(data: &Dataset, plan: &RepairPlan) -> Result<Dataset> {
    check_lambda(plan.lambda)?;
    let stratify_columns = if plan.stratify_columns.is_empty() {
        data.protected_columns().to_vec()
    } else {
        plan.stratify_columns.clone()
    };
    let index = data.stratify(&stratify_columns)?;
    let mut group_of = vec![0usize; data.n_rows()];
    let keys: Vec<&GroupKey> = index.keys().collect();
    for (g, (_, rows)) in index.iter().enumerate() {
        for &r in rows {
            group_of[r] = g;
        }
    }
    let fit_mask: Option<Vec<bool>> = plan.fit_rows.as_ref().map(|rows| {
        let mut mask = vec![false; data.n_rows()];
        for &r in rows {
            mask[r] = true;
        }
        mask
    });

    let columns: Vec<Vec<f64>> = data
        .columns()
        .par_iter()
        .zip(data.attribute_names())
        .map(|(column, name)| {
            let mut by_group: BTreeMap<GroupKey, Vec<(usize, f64)>> =
                keys.iter().map(|&k| (k.clone(), Vec::new())).collect();
            for (row, &v) in column.iter().enumerate() {
                if fit_mask.as_ref().is_none_or(|m| m[row]) {
                    by_group.get_mut(keys[group_of[row]]).expect("key").push((row, v));
                }
            }
            let model = build_quantile_model(name, &by_group)?;
            let table = plan.table(&model)?;
            let mut out = vec![f64::NAN; column.len()];
            for (row, v) in apply_table(&model, &table) {
                out[row] = v;
            }
            for (row, slot) in out.iter_mut().enumerate() {
                if slot.is_nan() {
                    let g = group_of[row];
                    *slot = table[g][model.groups[g].bucket_of(column[row])];
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    data.with_columns(columns)
}
