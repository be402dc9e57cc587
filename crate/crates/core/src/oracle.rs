//! The label oracle: the only place true labels are read.
//!
//! [`SealedLabels`] holds the truth column of a simulation dataset. Callers
//! never see labels; they get correctness bits (`a_i = 1` iff the prediction
//! was right) from a [`BudgetedOracle`], which charges one budget unit per
//! query, repeated instances included.

use std::sync::Arc;

use thiserror::Error;

use crate::dataset::ScoredDataset;
use crate::estimation::StratumTruth;
use crate::stratification::StrataPartition;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("dataset has no truth column; an oracle needs a simulation file")]
    NoTruth,
    #[error("labeling budget exceeded: requested {requested}, remaining {remaining}")]
    BudgetExceeded { requested: usize, remaining: usize },
    #[error("unknown instance index {index} (dataset has {len} instances)")]
    UnknownInstance { index: usize, len: usize },
    #[error("unknown instance id {0}")]
    UnknownId(u64),
    #[error("partition covers {partition} instances but the dataset has {dataset}")]
    PartitionMismatch { partition: usize, dataset: usize },
}

/// Correctness of the prediction for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectnessBit {
    pub index: usize,
    pub correct: bool,
}

impl CorrectnessBit {
    pub fn value(self) -> u8 {
        u8::from(self.correct)
    }
}

/// Truth labels of a simulation dataset, shareable across replicates.
#[derive(Debug)]
pub struct SealedLabels {
    ids: Vec<u64>,
    correct: Vec<bool>,
}

impl SealedLabels {
    pub fn from_dataset(dataset: &ScoredDataset) -> Result<Arc<Self>, OracleError> {
        if !dataset.has_truth() {
            return Err(OracleError::NoTruth);
        }
        let correct = dataset
            .records()
            .iter()
            .map(|r| r.truth() == Some(r.predicted))
            .collect();
        Ok(Arc::new(Self {
            ids: dataset.ids().collect(),
            correct,
        }))
    }

    pub fn len(&self) -> usize {
        self.correct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correct.is_empty()
    }

    /// Population accuracy A. Evaluation-only: used to score simulations,
    /// never by an estimator.
    pub fn true_accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.len() as f64
    }

    /// Per-stratum weight, true accuracy and size for a partition of this
    /// dataset. Evaluation-only, like [`true_accuracy`](Self::true_accuracy).
    pub fn stratum_truth(&self, partition: &StrataPartition) -> Result<Vec<StratumTruth>, OracleError> {
        if partition.len() != self.len() {
            return Err(OracleError::PartitionMismatch {
                partition: partition.len(),
                dataset: self.len(),
            });
        }
        Ok((0..partition.k())
            .map(|k| {
                let members = partition.members(k);
                let hits = members.iter().filter(|&&i| self.correct[i]).count();
                StratumTruth {
                    weight: partition.weights()[k],
                    accuracy: hits as f64 / members.len() as f64,
                    size: members.len(),
                }
            })
            .collect())
    }
}

/// Gateway to correctness bits with a hard labeling budget.
#[derive(Debug, Clone)]
pub struct BudgetedOracle {
    labels: Arc<SealedLabels>,
    budget: usize,
    consumed: usize,
}

impl BudgetedOracle {
    pub fn new(dataset: &ScoredDataset, budget: usize) -> Result<Self, OracleError> {
        Ok(Self::from_sealed(SealedLabels::from_dataset(dataset)?, budget))
    }

    pub fn from_sealed(labels: Arc<SealedLabels>, budget: usize) -> Self {
        Self {
            labels,
            budget,
            consumed: 0,
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.consumed
    }

    /// Number of instances behind the oracle.
    pub fn population(&self) -> usize {
        self.labels.len()
    }

    /// Reveals correctness for the given instance indices. Either every
    /// index is served and charged, or nothing is.
    pub fn query(&mut self, indices: &[usize]) -> Result<Vec<CorrectnessBit>, OracleError> {
        let len = self.labels.len();
        if let Some(&index) = indices.iter().find(|&&i| i >= len) {
            return Err(OracleError::UnknownInstance { index, len });
        }
        if indices.len() > self.remaining() {
            return Err(OracleError::BudgetExceeded {
                requested: indices.len(),
                remaining: self.remaining(),
            });
        }
        self.consumed += indices.len();
        Ok(indices
            .iter()
            .map(|&index| CorrectnessBit {
                index,
                correct: self.labels.correct[index],
            })
            .collect())
    }

    /// Same as [`query`](Self::query), addressed by instance id.
    pub fn query_ids(&mut self, ids: &[u64]) -> Result<Vec<CorrectnessBit>, OracleError> {
        let indices = ids
            .iter()
            .map(|id| {
                self.labels
                    .ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or(OracleError::UnknownId(*id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.query(&indices)
    }
}
