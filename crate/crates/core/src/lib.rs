//! Disparate-impact certification and repair for tabular data.
//!
//! A dataset is certified when no available learner predicts the protected
//! group from the other attributes well enough for a classifier built on
//! them to fall under the DI threshold. Repair moves each group's
//! per-attribute distribution toward a common median distribution, fully or
//! partially, while keeping within-group ranks.

pub mod certify;
pub mod data;
pub mod emd;
pub mod error;
pub mod harness;
pub mod learners;
pub mod metrics;
pub mod repair;
pub mod synth;

pub use certify::{certify, CertificationReport, CertifyOptions, Verdict};
pub use data::{load_csv, preprocess, Dataset, GroupKey, RawTable, SchemaConfig};
pub use error::{Error, Result};
pub use learners::LearnerKind;
pub use metrics::{ber, confusion, disparate_impact, ConfusionMatrix};
pub use repair::{repair_dataset, RepairMode, RepairPlan};
