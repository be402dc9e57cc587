//! Accuracy estimators and their variance formulas.
//!
//! Sampling is with replacement throughout, so no finite-population
//! correction appears in the estimators. Population-side formulas come in
//! two flavours ([`VarianceMode`]): exact, which keeps the N/(N-1) factor of
//! the Bernoulli population variance, and the large-strata limit where that
//! factor is 1.

use rand::Rng;
use thiserror::Error;

use crate::allocation::{AllocationPlan, Policy};
use crate::oracle::{BudgetedOracle, OracleError};
use crate::stratification::StrataPartition;

/// Agreement required between the two routes of [`variance_decomposition`].
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("plan has {plan} strata but the partition has {partition}")]
    PlanMismatch { plan: usize, partition: usize },
    #[error("stratum {0} received no samples")]
    UnsampledStratum(usize),
    #[error("stratum {stratum} has {size} instances; the exact variance needs at least 2")]
    StratumTooSmall { stratum: usize, size: usize },
    #[error("decomposition routes disagree: direct {direct}, closed form {closed}")]
    DecompositionMismatch { direct: f64, closed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// S_k^2 = N_k A_k (1 - A_k) / (N_k - 1).
    #[default]
    Exact,
    /// S_k^2 = A_k (1 - A_k), the 1/N_k -> 0 limit.
    LargeStrata,
}

/// Ground truth for one stratum, used by the population-side formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumTruth {
    pub weight: f64,
    pub accuracy: f64,
    pub size: usize,
}

impl StratumTruth {
    pub fn variance(&self, mode: VarianceMode) -> f64 {
        match mode {
            VarianceMode::Exact => bernoulli_population_variance(self.accuracy, self.size),
            VarianceMode::LargeStrata => self.accuracy * (1.0 - self.accuracy),
        }
    }

    pub fn sd(&self, mode: VarianceMode) -> f64 {
        self.variance(mode).sqrt()
    }
}

/// Overall accuracy sum W_k A_k.
pub fn population_accuracy(strata: &[StratumTruth]) -> f64 {
    strata.iter().map(|s| s.weight * s.accuracy).sum()
}

/// Running draw/success counts for one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub draws: usize,
    pub successes: usize,
}

impl Tally {
    pub fn record(&mut self, correct: bool) {
        self.draws += 1;
        self.successes += usize::from(correct);
    }

    pub fn mean(&self) -> Option<f64> {
        (self.draws > 0).then(|| self.successes as f64 / self.draws as f64)
    }

    /// Unbiased sample variance of the bits, n/(n-1) * p(1-p).
    pub fn sample_variance(&self) -> Option<f64> {
        let p = self.mean()?;
        (self.draws >= 2).then(|| self.draws as f64 / (self.draws - 1) as f64 * p * (1.0 - p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumEstimate {
    pub draws: usize,
    pub accuracy: f64,
    /// Unbiased within-stratum variance s_k^2; `None` below 2 draws.
    pub s2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub estimate: f64,
    /// Unbiased estimate of the estimator's variance; `None` when any
    /// stratum has fewer than 2 draws.
    pub variance: Option<f64>,
    pub samples_used: usize,
    pub per_stratum: Option<Vec<StratumEstimate>>,
}

/// Mean of the correctness bits of a whole population.
pub fn true_accuracy(bits: &[bool]) -> Option<f64> {
    if bits.is_empty() {
        return None;
    }
    Some(bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64)
}

/// Variance of a 0/1 population of size N with mean A: N A(1-A) / (N-1).
pub fn bernoulli_population_variance(accuracy: f64, size: usize) -> f64 {
    let n = size as f64;
    n * accuracy * (1.0 - accuracy) / (n - 1.0)
}

/// Simple-random-sampling estimate from observed bits.
pub fn random_from_bits(bits: &[bool]) -> Result<EstimateResult, EstimationError> {
    let mut tally = Tally::default();
    bits.iter().for_each(|&b| tally.record(b));
    random_from_tally(tally)
}

fn random_from_tally(tally: Tally) -> Result<EstimateResult, EstimationError> {
    if tally.draws < 2 {
        return Err(EstimationError::TooFewSamples(tally.draws));
    }
    let p = tally.successes as f64 / tally.draws as f64;
    Ok(EstimateResult {
        estimate: p,
        variance: Some(p * (1.0 - p) / (tally.draws - 1) as f64),
        samples_used: tally.draws,
        per_stratum: None,
    })
}

/// Stratified estimate from per-stratum tallies.
///
/// The point estimate is computed as sum(N_k * A_k) / N, which equals
/// sum(W_k * A_k) but stays exact when every A_k is 0 or 1.
pub fn stratified_from_tallies(sizes: &[usize], tallies: &[Tally]) -> Result<EstimateResult, EstimationError> {
    if sizes.len() != tallies.len() {
        return Err(EstimationError::PlanMismatch {
            plan: tallies.len(),
            partition: sizes.len(),
        });
    }
    let total: usize = sizes.iter().sum();
    let nf = total as f64;
    let mut weighted = 0.0;
    let mut variance = Some(0.0);
    let mut per_stratum = Vec::with_capacity(sizes.len());
    for (k, (&size, tally)) in sizes.iter().zip(tallies).enumerate() {
        let acc = tally.mean().ok_or(EstimationError::UnsampledStratum(k))?;
        weighted += size as f64 * acc;
        let w = size as f64 / nf;
        variance = match variance {
            Some(v) if tally.draws >= 2 => Some(v + w * w * acc * (1.0 - acc) / (tally.draws - 1) as f64),
            _ => None,
        };
        per_stratum.push(StratumEstimate {
            draws: tally.draws,
            accuracy: acc,
            s2: tally.sample_variance(),
        });
    }
    Ok(EstimateResult {
        estimate: weighted / nf,
        variance,
        samples_used: tallies.iter().map(|t| t.draws).sum(),
        per_stratum: Some(per_stratum),
    })
}

/// Draws `count` members of one stratum uniformly with replacement and
/// records their correctness.
pub(crate) fn draw_into<R: Rng + ?Sized>(
    oracle: &mut BudgetedOracle,
    members: &[usize],
    count: usize,
    rng: &mut R,
    tally: &mut Tally,
) -> Result<(), EstimationError> {
    if count == 0 {
        return Ok(());
    }
    let picks: Vec<usize> = (0..count).map(|_| members[rng.random_range(0..members.len())]).collect();
    for bit in oracle.query(&picks)? {
        tally.record(bit.correct);
    }
    Ok(())
}

/// Labels `n` instances drawn uniformly with replacement from the whole set.
pub fn random_estimate<R: Rng + ?Sized>(
    oracle: &mut BudgetedOracle,
    n: usize,
    rng: &mut R,
) -> Result<EstimateResult, EstimationError> {
    if n < 2 {
        return Err(EstimationError::TooFewSamples(n));
    }
    if n > oracle.remaining() {
        return Err(OracleError::BudgetExceeded {
            requested: n,
            remaining: oracle.remaining(),
        }
        .into());
    }
    let population = oracle.population();
    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..population)).collect();
    let mut tally = Tally::default();
    for bit in oracle.query(&picks)? {
        tally.record(bit.correct);
    }
    random_from_tally(tally)
}

/// Stratified random sampling under a fixed allocation plan.
pub fn stratified_estimate<R: Rng + ?Sized>(
    oracle: &mut BudgetedOracle,
    partition: &StrataPartition,
    plan: &AllocationPlan,
    rng: &mut R,
) -> Result<EstimateResult, EstimationError> {
    let counts = plan.counts();
    if counts.len() != partition.k() {
        return Err(EstimationError::PlanMismatch {
            plan: counts.len(),
            partition: partition.k(),
        });
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(EstimationError::UnsampledStratum(k));
    }
    let total: usize = counts.iter().sum();
    if total > oracle.remaining() {
        return Err(OracleError::BudgetExceeded {
            requested: total,
            remaining: oracle.remaining(),
        }
        .into());
    }
    let mut tallies = vec![Tally::default(); counts.len()];
    for (k, &count) in counts.iter().enumerate() {
        draw_into(oracle, partition.members(k), count, rng, &mut tallies[k])?;
    }
    stratified_from_tallies(&partition.sizes(), &tallies)
}

/// V(A^r) = N A(1-A) / ((N-1) n).
pub fn theoretical_variance_random(accuracy: f64, population: usize, n: usize) -> f64 {
    bernoulli_population_variance(accuracy, population) / n as f64
}

/// Random-sampling variance in the chosen mode.
pub fn random_variance(strata: &[StratumTruth], n: usize, mode: VarianceMode) -> f64 {
    let a = population_accuracy(strata);
    match mode {
        VarianceMode::Exact => theoretical_variance_random(a, strata.iter().map(|s| s.size).sum(), n),
        VarianceMode::LargeStrata => a * (1.0 - a) / n as f64,
    }
}

/// V(A^s) = sum W_k^2 S_k^2 / n_k with exact S_k^2.
pub fn theoretical_variance_stratified(strata: &[StratumTruth], counts: &[usize]) -> Result<f64, EstimationError> {
    stratified_variance(strata, counts, VarianceMode::Exact)
}

pub fn stratified_variance(strata: &[StratumTruth], counts: &[usize], mode: VarianceMode) -> Result<f64, EstimationError> {
    if strata.len() != counts.len() {
        return Err(EstimationError::PlanMismatch {
            plan: counts.len(),
            partition: strata.len(),
        });
    }
    let mut v = 0.0;
    for (k, (s, &c)) in strata.iter().zip(counts).enumerate() {
        if mode == VarianceMode::Exact && s.size < 2 {
            return Err(EstimationError::StratumTooSmall { stratum: k, size: s.size });
        }
        if c == 0 {
            return Err(EstimationError::UnsampledStratum(k));
        }
        v += s.weight * s.weight * s.variance(mode) / c as f64;
    }
    Ok(v)
}

/// Closed-form estimator variance under a continuous allocation of `n`:
/// proportional (1/n) sum W_k S_k^2, equal (K/n) sum W_k^2 S_k^2, optimal
/// (sum W_k S_k)^2 / n.
pub fn allocation_variance(strata: &[StratumTruth], n: usize, policy: Policy, mode: VarianceMode) -> f64 {
    let nf = n as f64;
    match policy {
        Policy::Proportional => strata.iter().map(|s| s.weight * s.variance(mode)).sum::<f64>() / nf,
        Policy::Equal => {
            strata.len() as f64 * strata.iter().map(|s| s.weight * s.weight * s.variance(mode)).sum::<f64>() / nf
        }
        Policy::Optimal => strata.iter().map(|s| s.weight * s.sd(mode)).sum::<f64>().powi(2) / nf,
    }
}

/// Variance gaps in the large-strata limit, each computed twice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceGaps {
    /// V(A^r) - V_pro = (1/n) sum W_k (A_k - A)^2.
    pub random_minus_pro: f64,
    /// V_pro - V_opt = (1/n) sum W_k (S_k - S_M)^2.
    pub pro_minus_opt: f64,
    /// Weighted mean S_M = sum W_k S_k.
    pub weighted_mean_sd: f64,
    pub random_minus_pro_direct: f64,
    pub pro_minus_opt_direct: f64,
}

/// Decomposes the variance gains of stratification. The closed forms are
/// checked against direct subtraction of the variance formulas; a mismatch
/// beyond [`IDENTITY_TOLERANCE`] is an error.
pub fn variance_decomposition(strata: &[StratumTruth], n: usize) -> Result<VarianceGaps, EstimationError> {
    let mode = VarianceMode::LargeStrata;
    let nf = n as f64;
    let a = population_accuracy(strata);
    let s_m: f64 = strata.iter().map(|s| s.weight * s.sd(mode)).sum();

    let closed_rp = strata.iter().map(|s| s.weight * (s.accuracy - a).powi(2)).sum::<f64>() / nf;
    let closed_po = strata.iter().map(|s| s.weight * (s.sd(mode) - s_m).powi(2)).sum::<f64>() / nf;

    let v_pro = allocation_variance(strata, n, Policy::Proportional, mode);
    let direct_rp = random_variance(strata, n, mode) - v_pro;
    let direct_po = v_pro - allocation_variance(strata, n, Policy::Optimal, mode);

    for (direct, closed) in [(direct_rp, closed_rp), (direct_po, closed_po)] {
        if (direct - closed).abs() > IDENTITY_TOLERANCE {
            return Err(EstimationError::DecompositionMismatch { direct, closed });
        }
    }
    Ok(VarianceGaps {
        random_minus_pro: closed_rp,
        pro_minus_opt: closed_po,
        weighted_mean_sd: s_m,
        random_minus_pro_direct: direct_rp,
        pro_minus_opt_direct: direct_po,
    })
}

/// V(A^r) - V_pro with exact finite-population factors. Sizes define N and
/// the weights.
pub fn finite_population_gap(strata: &[StratumTruth], n: usize) -> Result<f64, EstimationError> {
    let population: usize = strata.iter().map(|s| s.size).sum();
    let nf = n as f64;
    let a = strata.iter().map(|s| s.size as f64 * s.accuracy).sum::<f64>() / population as f64;
    let mut pro = 0.0;
    for (k, s) in strata.iter().enumerate() {
        if s.size < 2 {
            return Err(EstimationError::StratumTooSmall { stratum: k, size: s.size });
        }
        pro += s.size as f64 / population as f64 * bernoulli_population_variance(s.accuracy, s.size);
    }
    Ok(bernoulli_population_variance(a, population) / nf - pro / nf)
}

/// Closed form of [`finite_population_gap`] when every stratum has accuracy A:
/// -A(1-A)/n * sum N_k (N - N_k) / (N (N-1) (N_k - 1)).
pub fn equal_accuracy_gap(accuracy: f64, sizes: &[usize], n: usize) -> f64 {
    let big_n = sizes.iter().sum::<usize>() as f64;
    let sum: f64 = sizes
        .iter()
        .map(|&nk| {
            let nk = nk as f64;
            nk * (big_n - nk) / (big_n * (big_n - 1.0) * (nk - 1.0))
        })
        .sum();
    -accuracy * (1.0 - accuracy) / n as f64 * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::allocate_proportional;
    use crate::dataset::{InstanceRecord, ScoreKind, ScoredDataset, StratVariable};
    use crate::stratification::stratify_eqsz;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn st(weight: f64, accuracy: f64, size: usize) -> StratumTruth {
        StratumTruth { weight, accuracy, size }
    }

    #[test]
    fn population_mean() {
        assert_eq!(true_accuracy(&[true, true, false, true]), Some(0.75));
        assert_eq!(true_accuracy(&[true; 3]), Some(1.0));
        assert_eq!(true_accuracy(&[false; 3]), Some(0.0));
        assert_eq!(true_accuracy(&[]), None);
    }

    #[test]
    fn random_estimate_from_bits() {
        let r = random_from_bits(&[true, true, true, false]).unwrap();
        assert_eq!(r.estimate, 0.75);
        // Oracle: s^2 = sum (a - mean)^2 / (n - 1) = 0.75 / 3 = 0.25, v = s^2 / n.
        let s2 = [1.0f64, 1.0, 1.0, 0.0].iter().map(|a| (a - 0.75).powi(2)).sum::<f64>() / 3.0;
        assert!((r.variance.unwrap() - s2 / 4.0).abs() < 1e-15);
        assert!((r.variance.unwrap() - 0.0625).abs() < 1e-15);
        assert_eq!(random_from_bits(&[true; 5]).unwrap().variance, Some(0.0));
        assert_eq!(random_from_bits(&[true]).unwrap_err(), EstimationError::TooFewSamples(1));
    }

    #[test]
    fn stratified_from_known_bits() {
        let tallies = [Tally { draws: 3, successes: 3 }, Tally { draws: 3, successes: 1 }];
        let r = stratified_from_tallies(&[50, 50], &tallies).unwrap();
        assert!((r.estimate - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.variance.unwrap() - 1.0 / 36.0).abs() < 1e-15);
        assert_eq!(r.samples_used, 6);

        let r = stratified_from_tallies(&[5, 5], &[Tally { draws: 2, successes: 2 }, Tally { draws: 2, successes: 1 }])
            .unwrap();
        assert_eq!(r.estimate, 0.75);

        let r = stratified_from_tallies(&[5, 5], &[Tally { draws: 1, successes: 1 }, Tally { draws: 3, successes: 1 }])
            .unwrap();
        assert_eq!(r.variance, None);
        assert_eq!(
            stratified_from_tallies(&[5, 5], &[Tally::default(), Tally { draws: 3, successes: 1 }]).unwrap_err(),
            EstimationError::UnsampledStratum(0)
        );
    }

    #[test]
    fn random_variance_formula() {
        // a = [1,1,0,0]: S^2 = sum (a - 0.5)^2 / 3 = 1/3, V = S^2 / n.
        let s2 = [1.0f64, 1.0, 0.0, 0.0].iter().map(|a| (a - 0.5).powi(2)).sum::<f64>() / 3.0;
        assert!((theoretical_variance_random(0.5, 4, 2) - s2 / 2.0).abs() < 1e-15);
        assert_eq!(theoretical_variance_random(1.0, 10, 3), 0.0);
        assert_eq!(theoretical_variance_random(0.0, 10, 3), 0.0);
        let v = theoretical_variance_random(0.3, 100, 10);
        assert!((theoretical_variance_random(0.3, 100, 20) - v / 2.0).abs() < 1e-16);
    }

    #[test]
    fn stratified_variance_formula() {
        let pure = [st(0.3, 1.0, 30), st(0.7, 0.0, 70)];
        assert_eq!(theoretical_variance_stratified(&pure, &[1, 1]).unwrap(), 0.0);

        let single = [st(1.0, 0.3, 40)];
        assert!((theoretical_variance_stratified(&single, &[7]).unwrap() - theoretical_variance_random(0.3, 40, 7)).abs() < 1e-16);

        let two = [st(0.5, 0.9, 1 << 40), st(0.5, 0.5, 1 << 40)];
        assert!((theoretical_variance_stratified(&two, &[5, 5]).unwrap() - 0.017).abs() < 1e-12);

        assert!(matches!(
            theoretical_variance_stratified(&[st(1.0, 0.5, 1)], &[2]),
            Err(EstimationError::StratumTooSmall { .. })
        ));
    }

    #[test]
    fn allocation_variance_examples() {
        let m = VarianceMode::LargeStrata;
        let strata = [st(0.5, 0.95, 0), st(0.5, 0.55, 0)];
        let pro = allocation_variance(&strata, 100, Policy::Proportional, m);
        assert!((pro - 0.001475).abs() < 1e-15);

        let flat = [st(0.2, 0.8, 0), st(0.5, 0.8, 0), st(0.3, 0.8, 0)];
        let pro = allocation_variance(&flat, 50, Policy::Proportional, m);
        assert!((pro - random_variance(&flat, 50, m)).abs() < 1e-15);

        // W_k S_k constant: W = [0.6, 0.4], S = [0.2, 0.3].
        let a_of = |s: f64| 0.5 + (0.25 - s * s).sqrt();
        let balanced = [st(0.6, a_of(0.2), 0), st(0.4, a_of(0.3), 0)];
        let equ = allocation_variance(&balanced, 40, Policy::Equal, m);
        let opt = allocation_variance(&balanced, 40, Policy::Optimal, m);
        assert!((equ - opt).abs() < 1e-15, "{equ} vs {opt}");
    }

    #[test]
    fn decomposition_examples() {
        let g = variance_decomposition(&[st(0.5, 0.75, 0), st(0.5, 0.75, 0)], 10).unwrap();
        assert_eq!(g.random_minus_pro, 0.0);
        assert!(g.random_minus_pro_direct.abs() < 1e-15);

        // A_k = 0.3 and 0.7 share S_k = sqrt(0.21).
        let g = variance_decomposition(&[st(0.4, 0.3, 0), st(0.6, 0.7, 0)], 10).unwrap();
        assert!(g.pro_minus_opt.abs() < 1e-15);

        let g = variance_decomposition(&[st(0.5, 1.0, 0), st(0.5, 0.5, 0)], 10).unwrap();
        assert!((g.random_minus_pro - 0.00625).abs() < 1e-15);
        assert!((g.random_minus_pro_direct - 0.00625).abs() < 1e-15);
    }

    #[test]
    fn finite_population_gap_equal_accuracy() {
        let strata = [st(0.5, 0.6, 5), st(0.5, 0.6, 5)];
        let gap = finite_population_gap(&strata, 4).unwrap();
        let closed = equal_accuracy_gap(0.6, &[5, 5], 4);
        assert!(gap < 0.0);
        assert!((gap - closed).abs() < 1e-12);

        let big = [st(0.5, 0.6, 1 << 30), st(0.5, 0.6, 1 << 30)];
        assert!(finite_population_gap(&big, 4).unwrap().abs() < 1e-9);
        assert_eq!(finite_population_gap(&[st(1.0, 0.6, 9)], 4).unwrap(), 0.0);
    }

    fn dataset(pred: &[i64], truth: &[i64], scores: &[f64]) -> ScoredDataset {
        let records = (0..pred.len())
            .map(|i| InstanceRecord::new(i as u64, scores[i], pred[i], Some(truth[i])))
            .collect();
        ScoredDataset::new(records, ScoreKind::Probabilistic).unwrap()
    }

    #[test]
    fn estimates_see_only_correctness() {
        // Flipping both labels of every instance keeps every a_i and every z_i.
        let n = 40;
        let scores: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let pred: Vec<i64> = scores.iter().map(|&s| i64::from(s >= 0.5)).collect();
        let truth: Vec<i64> = (0..n).map(|i| if i % 3 == 0 { 1 - pred[i] } else { pred[i] }).collect();
        let a = dataset(&pred, &truth, &scores);
        let flip = |v: &[i64]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
        let b = dataset(&flip(&pred), &flip(&truth), &scores);
        assert_eq!(a.derive_z(), b.derive_z());

        let run = |ds: &ScoredDataset| {
            let z: StratVariable = ds.derive_z();
            let p = stratify_eqsz(&z, 4).unwrap();
            let plan = allocate_proportional(p.weights(), 20).unwrap();
            let mut oracle = BudgetedOracle::new(ds, 40).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let s = stratified_estimate(&mut oracle, &p, &plan, &mut rng).unwrap();
            let r = random_estimate(&mut oracle, 20, &mut rng).unwrap();
            (s, r)
        };
        assert_eq!(run(&a), run(&b));
    }

    #[test]
    fn sampling_respects_budget_and_seed() {
        let n = 30;
        let scores: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let pred = vec![1; n];
        let truth: Vec<i64> = (0..n).map(|i| i64::from(i % 4 != 0)).collect();
        let ds = dataset(&pred, &truth, &scores);

        let mut oracle = BudgetedOracle::new(&ds, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let first = random_estimate(&mut oracle, 10, &mut rng).unwrap();
        assert_eq!(oracle.consumed(), 10);
        assert!(matches!(random_estimate(&mut oracle, 2, &mut rng), Err(EstimationError::Oracle(_))));

        let mut oracle = BudgetedOracle::new(&ds, 10).unwrap();
        let again = random_estimate(&mut oracle, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(first, again);

        let p = stratify_eqsz(&ds.derive_z(), 3).unwrap();
        let plan = allocate_proportional(&[0.5, 0.5], 10).unwrap();
        let mut oracle = BudgetedOracle::new(&ds, 10).unwrap();
        assert!(matches!(
            stratified_estimate(&mut oracle, &p, &plan, &mut rng),
            Err(EstimationError::PlanMismatch { plan: 2, partition: 3 })
        ));
    }

    #[test]
    fn single_stratum_matches_random_in_distribution() {
        // With K = 1 both estimators are the mean of n uniform draws; under the
        // same generator they see the same instances.
        let n = 25;
        let scores: Vec<f64> = (0..n).map(|i| 0.5 + i as f64 / (2 * n) as f64).collect();
        let pred = vec![1; n];
        let truth: Vec<i64> = (0..n).map(|i| i64::from(i % 3 != 0)).collect();
        let ds = dataset(&pred, &truth, &scores);
        let p = stratify_eqsz(&ds.derive_z(), 1).unwrap();
        let plan = allocate_proportional(p.weights(), 12).unwrap();
        let mut o1 = BudgetedOracle::new(&ds, 12).unwrap();
        let mut o2 = BudgetedOracle::new(&ds, 12).unwrap();
        let s = stratified_estimate(&mut o1, &p, &plan, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let r = random_estimate(&mut o2, 12, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!((s.estimate - r.estimate).abs() < 1e-15);
        assert!((s.variance.unwrap() - r.variance.unwrap()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn large_strata_variance_ordering(
            raw in prop::collection::vec((0.01f64..1.0, 0.0f64..=1.0), 1..10),
            n in 1usize..500,
        ) {
            let total: f64 = raw.iter().map(|r| r.0).sum();
            let strata: Vec<_> = raw.iter().map(|&(w, a)| st(w / total, a, 0)).collect();
            let m = VarianceMode::LargeStrata;
            let opt = allocation_variance(&strata, n, Policy::Optimal, m);
            let pro = allocation_variance(&strata, n, Policy::Proportional, m);
            let rnd = random_variance(&strata, n, m);
            prop_assert!(opt <= pro + 1e-12);
            prop_assert!(pro <= rnd + 1e-12);
            prop_assert!(variance_decomposition(&strata, n).is_ok());
        }
    }
}
