//! Estimating classifier accuracy from a small labeled sample.
//!
//! A scored, unlabeled set is stratified by a confidence variable `z`
//! derived from the classifier's output; a labeling budget is spread over the
//! strata; and the per-stratum accuracies are combined into an estimate of
//! overall accuracy with a variance estimate. The [`harness`] module replays
//! this many times on sets with known labels to compare designs.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod dataset;
pub mod density;
pub mod estimation;
pub mod harness;
pub mod oracle;
pub mod par;
pub mod stratification;

use thiserror::Error;

pub use allocation::{AllocationError, AllocationPlan, Policy};
pub use dataset::{DatasetError, InstanceRecord, ScoreKind, ScoredDataset, StratVariable};
pub use density::{DensityError, DensityModel};
pub use estimation::{EstimateResult, EstimationError};
pub use oracle::{BudgetedOracle, OracleError, SealedLabels};
pub use par::Execution;
pub use stratification::{Method, StrataPartition, StratifyError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Stratify(#[from] StratifyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Spec(#[from] harness::SpecError),
    #[error("invalid configuration: {0}")]
    Config(String),
}
