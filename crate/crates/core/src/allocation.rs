//! Splitting the labeling budget across strata.
//!
//! Fixed plans (proportional, equal, optimal with known S_k) are computed up
//! front. When S_k is unknown, [`OptState`] runs the pilot-then-allocate
//! procedure: `n_ini` labels per stratum, then the remaining budget in
//! batches of `n_step`, each batch split by the optimal rule using the
//! current S_k estimates. One batch covering the whole remainder is the
//! two-phase variant ([`opt_a1`]); smaller batches give the iterative one
//! ([`opt_a2`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::estimation::{draw_into, stratified_from_tallies, EstimateResult, EstimationError, Tally};
use crate::oracle::BudgetedOracle;
use crate::stratification::StrataPartition;

/// Every fixed plan gives each stratum at least this many labels, so the
/// per-stratum variance estimate is always defined.
pub const MIN_PER_STRATUM: usize = 2;
pub const DEFAULT_N_INI: usize = 5;
pub const DEFAULT_N_STEP: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("budget n = {n} is below {min} per stratum for K = {k}")]
    BudgetTooSmall { n: usize, k: usize, min: usize },
    #[error("real allocation sums to {sum}, expected {n}")]
    SumMismatch { sum: f64, n: usize },
    #[error("no strata to allocate to")]
    NoStrata,
    #[error("weights and standard deviations must be finite and nonnegative")]
    InvalidInput,
    #[error("n_ini must be at least 2, got {0}")]
    PilotTooSmall(usize),
    #[error("n_step must be at least 1")]
    ZeroStep,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Proportional,
    Equal,
    Optimal,
}

/// Per-stratum label counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationPlan {
    counts: Vec<usize>,
    policy: Policy,
    fallback: bool,
}

impl AllocationPlan {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// Set when an optimal plan degenerated to proportional because every
    /// S_k was zero.
    pub fn is_fallback(&self) -> bool {
        self.fallback
    }
}

/// Largest-remainder rounding of a real allocation summing to `n`, then
/// strata under `min` are raised one unit at a time, each unit taken from
/// the currently largest stratum.
pub fn round_allocation(real: &[f64], n: usize, min: usize) -> Result<Vec<usize>, AllocationError> {
    let k = real.len();
    if k == 0 {
        return Err(AllocationError::NoStrata);
    }
    if real.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(AllocationError::InvalidInput);
    }
    let sum: f64 = real.iter().sum();
    if (sum - n as f64).abs() > 1e-9 * (n as f64).max(1.0) {
        return Err(AllocationError::SumMismatch { sum, n });
    }
    if n < k * min {
        return Err(AllocationError::BudgetTooSmall { n, k, min });
    }

    let mut counts: Vec<usize> = real.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (real[a] - real[a].floor(), real[b] - real[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    // Floating error can leave `assigned` one off either way.
    if assigned <= n {
        for &j in order.iter().cycle().take(n - assigned) {
            counts[j] += 1;
        }
    } else {
        for _ in 0..assigned - n {
            let j = argmax(&counts);
            counts[j] -= 1;
        }
    }

    while let Some(low) = counts.iter().position(|&c| c < min) {
        let donor = argmax(&counts);
        counts[donor] -= 1;
        counts[low] += 1;
    }
    Ok(counts)
}

/// Index of the largest count, lowest index on ties.
fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (j, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = j;
        }
    }
    best
}

fn check_budget(n: usize, k: usize) -> Result<(), AllocationError> {
    if k == 0 {
        return Err(AllocationError::NoStrata);
    }
    if n < MIN_PER_STRATUM * k {
        return Err(AllocationError::BudgetTooSmall {
            n,
            k,
            min: MIN_PER_STRATUM,
        });
    }
    Ok(())
}

fn proportional_real(weights: &[f64], n: usize) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total * n as f64).collect()
}

/// n_k proportional to W_k.
pub fn allocate_proportional(weights: &[f64], n: usize) -> Result<AllocationPlan, AllocationError> {
    check_budget(n, weights.len())?;
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(AllocationError::InvalidInput);
    }
    Ok(AllocationPlan {
        counts: round_allocation(&proportional_real(weights, n), n, MIN_PER_STRATUM)?,
        policy: Policy::Proportional,
        fallback: false,
    })
}

/// n / K each, remainder to the lowest-index strata.
pub fn allocate_equal(k: usize, n: usize) -> Result<AllocationPlan, AllocationError> {
    check_budget(n, k)?;
    let counts = (0..k).map(|j| n / k + usize::from(j < n % k)).collect();
    Ok(AllocationPlan {
        counts,
        policy: Policy::Equal,
        fallback: false,
    })
}

/// Real-valued n_k = n W_k S_k / sum(W_j S_j); `None` if every S_k is zero.
pub fn optimal_shares(weights: &[f64], sds: &[f64], n: usize) -> Result<Option<Vec<f64>>, AllocationError> {
    if weights.len() != sds.len() {
        return Err(AllocationError::InvalidInput);
    }
    if weights.iter().chain(sds).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(AllocationError::InvalidInput);
    }
    let products: Vec<f64> = weights.iter().zip(sds).map(|(w, s)| w * s).collect();
    let total: f64 = products.iter().sum();
    if !(total > 0.0) {
        return Ok(None);
    }
    Ok(Some(products.iter().map(|p| p / total * n as f64).collect()))
}

/// Optimal counts with a per-stratum floor; all-zero S_k falls back to
/// proportional. Returns (counts, fallback).
fn optimal_counts(weights: &[f64], sds: &[f64], n: usize, min: usize) -> Result<(Vec<usize>, bool), AllocationError> {
    match optimal_shares(weights, sds, n)? {
        Some(real) => Ok((round_allocation(&real, n, min)?, false)),
        None => Ok((round_allocation(&proportional_real(weights, n), n, min)?, true)),
    }
}

/// n_k proportional to W_k S_k for known S_k.
pub fn allocate_optimal(weights: &[f64], sds: &[f64], n: usize) -> Result<AllocationPlan, AllocationError> {
    check_budget(n, weights.len())?;
    let (counts, fallback) = optimal_counts(weights, sds, n, MIN_PER_STRATUM)?;
    Ok(AllocationPlan {
        counts,
        policy: Policy::Optimal,
        fallback,
    })
}

/// How strata whose pilot labels are all equal (estimated S_k = 0) are
/// treated when splitting later batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroVarianceRule {
    /// Replace a zero S_k estimate by the one from add-one smoothed counts,
    /// (successes + 1) / (draws + 2). Nonzero estimates are used as is.
    #[default]
    Smoothed,
    /// Use the plug-in estimate as is: a stratum with S_k = 0 gets no
    /// further labels. This makes the pooled estimator biased.
    Literal,
}

impl FromStr for ZeroVarianceRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoothed" => Ok(Self::Smoothed),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown zero-variance rule `{other}` (expected smoothed or literal)")),
        }
    }
}

impl fmt::Display for ZeroVarianceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Smoothed => "smoothed",
            Self::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptConfig {
    pub n: usize,
    pub n_ini: usize,
    /// Batch size after the pilot; `None` spends the whole remainder in one
    /// batch.
    pub n_step: Option<usize>,
    pub zero_variance: ZeroVarianceRule,
}

impl OptConfig {
    pub fn two_phase(n: usize, n_ini: usize) -> Self {
        Self {
            n,
            n_ini,
            n_step: None,
            zero_variance: ZeroVarianceRule::default(),
        }
    }

    pub fn iterative(n: usize, n_ini: usize, n_step: usize) -> Self {
        Self {
            n,
            n_ini,
            n_step: Some(n_step),
            zero_variance: ZeroVarianceRule::default(),
        }
    }
}

/// Running state of the adaptive optimal-allocation procedure for one
/// replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    tallies: Vec<Tally>,
    weights: Vec<f64>,
    n_ini: usize,
    n_step: usize,
    n_rem: usize,
    zero_variance: ZeroVarianceRule,
    batches: Vec<usize>,
    allocations: Vec<Vec<usize>>,
    fallback_batches: usize,
}

impl OptState {
    /// Validates the configuration and labels `n_ini` instances per stratum.
    pub fn start<R: Rng + ?Sized>(
        oracle: &mut BudgetedOracle,
        partition: &StrataPartition,
        config: &OptConfig,
        rng: &mut R,
    ) -> Result<Self, AllocationError> {
        let k = partition.k();
        if config.n_ini < 2 {
            return Err(AllocationError::PilotTooSmall(config.n_ini));
        }
        if config.n < k * config.n_ini {
            return Err(AllocationError::BudgetTooSmall {
                n: config.n,
                k,
                min: config.n_ini,
            });
        }
        let n_rem = config.n - k * config.n_ini;
        let n_step = match config.n_step {
            Some(0) => return Err(AllocationError::ZeroStep),
            Some(s) => s,
            None => n_rem.max(1),
        };
        if config.n > oracle.remaining() {
            return Err(EstimationError::from(crate::oracle::OracleError::BudgetExceeded {
                requested: config.n,
                remaining: oracle.remaining(),
            })
            .into());
        }

        let mut tallies = vec![Tally::default(); k];
        for (j, tally) in tallies.iter_mut().enumerate() {
            draw_into(oracle, partition.members(j), config.n_ini, rng, tally)?;
        }
        Ok(Self {
            tallies,
            weights: partition.weights().to_vec(),
            n_ini: config.n_ini,
            n_step,
            n_rem,
            zero_variance: config.zero_variance,
            batches: vec![k * config.n_ini],
            allocations: vec![vec![config.n_ini; k]],
            fallback_batches: 0,
        })
    }

    pub fn tallies(&self) -> &[Tally] {
        &self.tallies
    }

    pub fn remaining(&self) -> usize {
        self.n_rem
    }

    /// Sizes of every labeling batch so far, pilot first.
    pub fn batches(&self) -> &[usize] {
        &self.batches
    }

    /// Per-stratum counts of every batch, pilot first.
    pub fn allocations(&self) -> &[Vec<usize>] {
        &self.allocations
    }

    /// Batches whose S_k estimates were all zero and were split
    /// proportionally instead.
    pub fn fallback_batches(&self) -> usize {
        self.fallback_batches
    }

    pub fn n_ini(&self) -> usize {
        self.n_ini
    }

    /// Plug-in S_k estimates, sqrt(m/(m-1) * A_k (1 - A_k)).
    pub fn sd_estimates(&self) -> Vec<f64> {
        self.tallies
            .iter()
            .map(|t| t.sample_variance().unwrap_or(0.0).sqrt())
            .collect()
    }

    fn allocation_sds(&self) -> Vec<f64> {
        let raw = self.sd_estimates();
        if self.zero_variance == ZeroVarianceRule::Literal || raw.iter().all(|&s| s == 0.0) {
            return raw;
        }
        raw.iter()
            .zip(&self.tallies)
            .map(|(&s, t)| {
                if s > 0.0 {
                    return s;
                }
                let m = t.draws as f64;
                let p = (t.successes as f64 + 1.0) / (m + 2.0);
                (m / (m - 1.0) * p * (1.0 - p)).sqrt()
            })
            .collect()
    }

    /// Allocates and labels the next batch of min(n_step, n_rem). Returns the
    /// batch's per-stratum counts, or `None` once the budget is spent.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        oracle: &mut BudgetedOracle,
        partition: &StrataPartition,
        rng: &mut R,
    ) -> Result<Option<Vec<usize>>, AllocationError> {
        if self.n_rem == 0 {
            return Ok(None);
        }
        let n_curr = self.n_step.min(self.n_rem);
        let (counts, fallback) = optimal_counts(&self.weights, &self.allocation_sds(), n_curr, 0)?;
        self.fallback_batches += usize::from(fallback);
        for (j, &c) in counts.iter().enumerate() {
            draw_into(oracle, partition.members(j), c, rng, &mut self.tallies[j])?;
        }
        self.n_rem -= n_curr;
        self.batches.push(n_curr);
        self.allocations.push(counts.clone());
        Ok(Some(counts))
    }

    /// Pooled estimate from every label drawn so far.
    pub fn estimate(&self, partition: &StrataPartition) -> Result<EstimateResult, AllocationError> {
        Ok(stratified_from_tallies(&partition.sizes(), &self.tallies)?)
    }
}

pub fn run_opt<R: Rng + ?Sized>(
    oracle: &mut BudgetedOracle,
    partition: &StrataPartition,
    config: &OptConfig,
    rng: &mut R,
) -> Result<EstimateResult, AllocationError> {
    let mut state = OptState::start(oracle, partition, config, rng)?;
    while state.step(oracle, partition, rng)?.is_some() {}
    state.estimate(partition)
}

/// Pilot of `n_ini` per stratum, then the rest of `n` split once by the
/// optimal rule.
pub fn opt_a1<R: Rng + ?Sized>(
    oracle: &mut BudgetedOracle,
    partition: &StrataPartition,
    n: usize,
    n_ini: usize,
    rng: &mut R,
) -> Result<EstimateResult, AllocationError> {
    run_opt(oracle, partition, &OptConfig::two_phase(n, n_ini), rng)
}

/// Pilot of `n_ini` per stratum, then batches of `n_step` re-split after
/// every batch.
pub fn opt_a2<R: Rng + ?Sized>(
    oracle: &mut BudgetedOracle,
    partition: &StrataPartition,
    n: usize,
    n_ini: usize,
    n_step: usize,
    rng: &mut R,
) -> Result<EstimateResult, AllocationError> {
    run_opt(oracle, partition, &OptConfig::iterative(n, n_ini, n_step), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InstanceRecord, ScoreKind, ScoredDataset};
    use crate::stratification::stratify_eqsz;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rounding() {
        assert_eq!(round_allocation(&[33.4, 33.3, 33.3], 100, 2).unwrap(), vec![34, 33, 33]);
        assert_eq!(round_allocation(&[0.4, 99.6], 100, 2).unwrap(), vec![2, 98]);
        assert_eq!(round_allocation(&[3.0, 5.0, 2.0], 10, 2).unwrap(), vec![3, 5, 2]);
        assert_eq!(
            round_allocation(&[1.0, 1.0, 1.0], 3, 2).unwrap_err(),
            AllocationError::BudgetTooSmall { n: 3, k: 3, min: 2 }
        );
        assert!(matches!(round_allocation(&[1.0, 1.0], 3, 0), Err(AllocationError::SumMismatch { .. })));
    }

    #[test]
    fn proportional_plans() {
        assert_eq!(allocate_proportional(&[0.5, 0.3, 0.2], 100).unwrap().counts(), &[50, 30, 20]);
        let third = 1.0 / 3.0;
        assert_eq!(allocate_proportional(&[third; 3], 100).unwrap().counts(), &[34, 33, 33]);
        assert_eq!(allocate_proportional(&[0.98, 0.02], 20).unwrap().counts(), &[18, 2]);
        assert!(allocate_proportional(&[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn equal_plans() {
        assert_eq!(allocate_equal(4, 100).unwrap().counts(), &[25; 4]);
        assert_eq!(allocate_equal(3, 100).unwrap().counts(), &[34, 33, 33]);
        assert_eq!(allocate_equal(3, 5).unwrap_err(), AllocationError::BudgetTooSmall { n: 5, k: 3, min: 2 });
    }

    #[test]
    fn optimal_plans() {
        assert_eq!(allocate_optimal(&[0.5, 0.5], &[0.4, 0.1], 50).unwrap().counts(), &[40, 10]);
        // W_k S_k constant -> equal split.
        assert_eq!(allocate_optimal(&[0.6, 0.4], &[0.2, 0.3], 40).unwrap().counts(), &[20, 20]);
        let plan = allocate_optimal(&[0.7, 0.3], &[0.0, 0.0], 20).unwrap();
        assert!(plan.is_fallback());
        assert_eq!(plan.counts(), allocate_proportional(&[0.7, 0.3], 20).unwrap().counts());
    }

    /// Four strata of 50 with the given number of correct predictions each.
    fn strata_dataset(correct: &[usize]) -> (ScoredDataset, StrataPartition) {
        let size = 50;
        let mut records = Vec::new();
        for (k, &c) in correct.iter().enumerate() {
            for i in 0..size {
                let id = (k * size + i) as u64;
                let z = 0.5 + 0.1 * k as f64 + 0.0001 * i as f64;
                let truth = if i < c { 1 } else { 0 };
                records.push(InstanceRecord::new(id, z, 1, Some(truth)));
            }
        }
        let ds = ScoredDataset::new(records, ScoreKind::Probabilistic).unwrap();
        let p = stratify_eqsz(&ds.derive_z(), correct.len()).unwrap();
        (ds, p)
    }

    #[test]
    fn two_phase_budget_split() {
        let (ds, p) = strata_dataset(&[45, 30, 20]);
        let mut oracle = BudgetedOracle::new(&ds, 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = OptState::start(&mut oracle, &p, &OptConfig::two_phase(60, 10), &mut rng).unwrap();
        assert_eq!(oracle.consumed(), 30);
        assert_eq!(state.remaining(), 30);
        let batch = state.step(&mut oracle, &p, &mut rng).unwrap().unwrap();
        assert_eq!(batch.iter().sum::<usize>(), 30);
        assert!(state.step(&mut oracle, &p, &mut rng).unwrap().is_none());
        assert_eq!(oracle.consumed(), 60);
        assert_eq!(state.estimate(&p).unwrap().samples_used, 60);
    }

    #[test]
    fn all_pure_pilot_falls_back_to_proportional() {
        let (ds, p) = strata_dataset(&[50, 0, 50]);
        let mut oracle = BudgetedOracle::new(&ds, 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for rule in [ZeroVarianceRule::Literal, ZeroVarianceRule::Smoothed] {
            let cfg = OptConfig { zero_variance: rule, ..OptConfig::two_phase(30, 5) };
            let mut oracle = BudgetedOracle::new(&ds, 30).unwrap();
            let mut state = OptState::start(&mut oracle, &p, &cfg, &mut rng).unwrap();
            let batch = state.step(&mut oracle, &p, &mut rng).unwrap().unwrap();
            assert_eq!(batch, vec![5, 5, 5]);
            assert_eq!(state.fallback_batches(), 1);
        }
        let r = opt_a1(&mut oracle, &p, 60, 5, &mut rng).unwrap();
        assert!((r.estimate - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn literal_rule_starves_zero_variance_stratum() {
        // Stratum 0 is pure, so its pilot S_k is exactly 0.
        let (ds, p) = strata_dataset(&[50, 25, 25]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = OptConfig {
            zero_variance: ZeroVarianceRule::Literal,
            ..OptConfig::two_phase(40, 5)
        };
        let mut oracle = BudgetedOracle::new(&ds, 40).unwrap();
        let mut state = OptState::start(&mut oracle, &p, &cfg, &mut rng).unwrap();
        assert_eq!(state.sd_estimates()[0], 0.0);
        let batch = state.step(&mut oracle, &p, &mut rng).unwrap().unwrap();
        assert_eq!(batch[0], 0);
        assert_eq!(batch.iter().sum::<usize>(), 25);

        let cfg = OptConfig::two_phase(40, 5);
        let mut oracle = BudgetedOracle::new(&ds, 40).unwrap();
        let mut state = OptState::start(&mut oracle, &p, &cfg, &mut rng).unwrap();
        let batch = state.step(&mut oracle, &p, &mut rng).unwrap().unwrap();
        assert!(batch[0] > 0);
    }

    #[test]
    fn iterative_batches() {
        let (ds, p) = strata_dataset(&[45, 30, 20]);
        let mut oracle = BudgetedOracle::new(&ds, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = OptState::start(&mut oracle, &p, &OptConfig::iterative(100, 5, 20), &mut rng).unwrap();
        while state.step(&mut oracle, &p, &mut rng).unwrap().is_some() {}
        assert_eq!(state.batches(), &[15, 20, 20, 20, 20, 5]);
        assert_eq!(oracle.consumed(), 100);
    }

    #[test]
    fn large_step_equals_two_phase() {
        let (ds, p) = strata_dataset(&[45, 30, 20]);
        let run = |step: Option<usize>| {
            let mut oracle = BudgetedOracle::new(&ds, 60).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            match step {
                Some(s) => opt_a2(&mut oracle, &p, 60, 5, s, &mut rng).unwrap(),
                None => opt_a1(&mut oracle, &p, 60, 5, &mut rng).unwrap(),
            }
        };
        assert_eq!(run(None), run(Some(45)));
        assert_eq!(run(None), run(Some(1000)));
        assert_eq!(run(Some(10)), run(Some(10)));
    }

    #[test]
    fn rejects_bad_configs() {
        let (ds, p) = strata_dataset(&[45, 30, 20]);
        let mut oracle = BudgetedOracle::new(&ds, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(
            opt_a1(&mut oracle, &p, 100, 1, &mut rng).unwrap_err(),
            AllocationError::PilotTooSmall(1)
        );
        assert!(matches!(opt_a1(&mut oracle, &p, 10, 5, &mut rng), Err(AllocationError::BudgetTooSmall { .. })));
        assert_eq!(opt_a2(&mut oracle, &p, 30, 5, 0, &mut rng).unwrap_err(), AllocationError::ZeroStep);
        let mut small = BudgetedOracle::new(&ds, 20).unwrap();
        assert!(opt_a1(&mut small, &p, 30, 5, &mut rng).is_err());
        assert_eq!(small.consumed(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn plans_sum_to_budget(raw in prop::collection::vec((0.001f64..1.0, 0.0f64..0.5), 1..10), extra in 0usize..300) {
            let k = raw.len();
            let n = 2 * k + extra;
            let total: f64 = raw.iter().map(|r| r.0).sum();
            let w: Vec<f64> = raw.iter().map(|r| r.0 / total).collect();
            let s: Vec<f64> = raw.iter().map(|r| r.1).collect();
            for plan in [
                allocate_proportional(&w, n).unwrap(),
                allocate_equal(k, n).unwrap(),
                allocate_optimal(&w, &s, n).unwrap(),
            ] {
                prop_assert_eq!(plan.total(), n);
                prop_assert!(plan.counts().iter().all(|&c| c >= MIN_PER_STRATUM));
            }
        }

        #[test]
        fn iterative_refinement_is_monotone(seed in any::<u64>(), step in 1usize..30) {
            let (ds, p) = strata_dataset(&[48, 35, 20, 10]);
            let mut oracle = BudgetedOracle::new(&ds, 120).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = OptState::start(&mut oracle, &p, &OptConfig::iterative(120, 5, step), &mut rng).unwrap();
            let mut prev: Vec<usize> = state.tallies().iter().map(|t| t.draws).collect();
            while state.step(&mut oracle, &p, &mut rng).unwrap().is_some() {
                let now: Vec<usize> = state.tallies().iter().map(|t| t.draws).collect();
                prop_assert!(now.iter().zip(&prev).all(|(a, b)| a >= b));
                prev = now;
            }
            prop_assert_eq!(oracle.consumed(), 120);
            let r = state.estimate(&p).unwrap();
            for (est, t) in r.per_stratum.unwrap().iter().zip(state.tallies()) {
                prop_assert_eq!(est.accuracy, t.successes as f64 / t.draws as f64);
            }
        }
    }
}
