//! Synthetic simulation datasets with exactly controlled stratum accuracies.
//!
//! Spec files are line-oriented `key=value` text:
//!
//! ```text
//! # total size
//! N=10000
//! # stratum=W,A,z_mean,z_sd
//! stratum=0.5,0.9,0.95,0.02
//! stratum=0.5,0.6,0.65,0.02
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{DatasetError, InstanceRecord, ScoreKind, ScoredDataset};

/// z is the predicted-class probability of a binary classifier, so it lives
/// in [0.5, 1].
pub const Z_RANGE: (f64, f64) = (0.5, 1.0);
const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("spec line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("spec is missing N")]
    MissingSize,
    #[error("spec has no strata")]
    NoStrata,
    #[error("stratum weights sum to {0}, expected 1")]
    Weights(f64),
    #[error("stratum {index}: {message}")]
    Stratum { index: usize, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticStratum {
    pub weight: f64,
    pub accuracy: f64,
    pub z_mean: f64,
    pub z_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub size: usize,
    pub strata: Vec<SyntheticStratum>,
}

impl SyntheticSpec {
    pub fn new(size: usize, strata: Vec<SyntheticStratum>) -> Result<Self, SpecError> {
        let spec = Self { size, strata };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.strata.is_empty() {
            return Err(SpecError::NoStrata);
        }
        let total: f64 = self.strata.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SpecError::Weights(total));
        }
        for (index, s) in self.strata.iter().enumerate() {
            let bad = |message: &str| SpecError::Stratum {
                index,
                message: message.to_owned(),
            };
            if !(s.weight > 0.0) {
                return Err(bad("weight must be positive"));
            }
            if !(0.0..=1.0).contains(&s.accuracy) {
                return Err(bad("accuracy must be in [0, 1]"));
            }
            if !s.z_mean.is_finite() || !(s.z_sd >= 0.0) || !s.z_sd.is_finite() {
                return Err(bad("z_mean must be finite and z_sd nonnegative"));
            }
        }
        let sizes = self.stratum_sizes();
        if let Some(index) = sizes.iter().position(|&n| n == 0) {
            return Err(SpecError::Stratum {
                index,
                message: format!("rounds to no instances at N = {}", self.size),
            });
        }
        Ok(())
    }

    /// round(W_k N) for k >= 1; stratum 0 takes the remainder.
    pub fn stratum_sizes(&self) -> Vec<usize> {
        let rest: Vec<usize> = self.strata[1..]
            .iter()
            .map(|s| (s.weight * self.size as f64).round() as usize)
            .collect();
        let first = self.size.saturating_sub(rest.iter().sum());
        std::iter::once(first).chain(rest).collect()
    }

    /// Number of correct predictions per stratum, round(A_k N_k).
    pub fn correct_counts(&self) -> Vec<usize> {
        self.stratum_sizes()
            .iter()
            .zip(&self.strata)
            .map(|(&n, s)| (s.accuracy * n as f64).round() as usize)
            .collect()
    }

    /// Overall accuracy of the generated data.
    pub fn realized_accuracy(&self) -> f64 {
        self.correct_counts().iter().sum::<usize>() as f64 / self.size as f64
    }

    /// Copy with every stratum accuracy multiplied so the weighted mean
    /// becomes `level`; scaled values are clamped to [0, 1].
    pub fn with_accuracy_level(&self, level: f64) -> Self {
        let base: f64 = self.strata.iter().map(|s| s.weight * s.accuracy).sum();
        let factor = if base > 0.0 { level / base } else { 0.0 };
        Self {
            size: self.size,
            strata: self
                .strata
                .iter()
                .map(|s| SyntheticStratum {
                    accuracy: (s.accuracy * factor).clamp(0.0, 1.0),
                    ..*s
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut size = None;
        let mut strata = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| SpecError::Syntax { line: line_no, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key=value, got `{line}`")))?;
            match key.trim() {
                "N" => {
                    let n = value
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| syntax(format!("N must be a positive integer, got `{}`", value.trim())))?;
                    if n == 0 {
                        return Err(syntax("N must be positive".into()));
                    }
                    size = Some(n);
                }
                "stratum" => {
                    let fields = value
                        .split(',')
                        .map(|f| f.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| syntax(format!("stratum needs four numbers, got `{}`", value.trim())))?;
                    let [weight, accuracy, z_mean, z_sd] = fields[..] else {
                        return Err(syntax(format!("stratum needs W,A,z_mean,z_sd; got {} fields", fields.len())));
                    };
                    strata.push(SyntheticStratum {
                        weight,
                        accuracy,
                        z_mean,
                        z_sd,
                    });
                }
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }
        Self::new(size.ok_or(SpecError::MissingSize)?, strata)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpecError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("N={}\n", self.size);
        for s in &self.strata {
            out.push_str(&format!("stratum={},{},{},{}\n", s.weight, s.accuracy, s.z_mean, s.z_sd));
        }
        out
    }
}

fn draw_z<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let (lo, hi) = Z_RANGE;
    if sd == 0.0 {
        return mean.clamp(lo, hi);
    }
    let normal = Normal::new(mean, sd).expect("sd validated");
    for _ in 0..MAX_REJECTIONS {
        let z = normal.sample(rng);
        if (lo..=hi).contains(&z) {
            return z;
        }
    }
    mean.clamp(lo, hi)
}

/// Generates a binary probabilistic simulation dataset.
///
/// Stratum k gets exactly round(A_k N_k) correct predictions at shuffled
/// positions; z follows the stratum's normal distribution truncated to
/// [0.5, 1]. Each instance's predicted label is a fair coin, its stored score
/// is p(positive) consistent with that label, and its truth is the
/// prediction or its flip. Instances are shuffled globally and numbered
/// 1..=N in file order. For a fixed seed the z values, predictions and
/// positions do not depend on the stratum accuracies.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<ScoredDataset, SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = spec.stratum_sizes();
    let correct = spec.correct_counts();

    let mut rows: Vec<(f64, i64, i64)> = Vec::with_capacity(spec.size);
    for ((stratum, &size), &hits) in spec.strata.iter().zip(&sizes).zip(&correct) {
        let mut bits: Vec<bool> = (0..size).map(|i| i < hits).collect();
        bits.shuffle(&mut rng);
        for is_correct in bits {
            let z = draw_z(&mut rng, stratum.z_mean, stratum.z_sd);
            let predicted: i64 = if rng.random::<bool>() { 1 } else { 0 };
            let score = if predicted == 1 { z } else { 1.0 - z };
            let truth = if is_correct { predicted } else { 1 - predicted };
            rows.push((score, predicted, truth));
        }
    }
    rows.shuffle(&mut rng);

    let records = rows
        .into_iter()
        .enumerate()
        .map(|(i, (score, predicted, truth))| InstanceRecord::new(i as u64 + 1, score, predicted, Some(truth)))
        .collect();
    Ok(ScoredDataset::new(records, ScoreKind::Probabilistic)?)
}
