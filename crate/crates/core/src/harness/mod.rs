//! Monte-Carlo experiment harness.
//!
//! An experiment is a grid of cells (stratification method x allocation x K
//! x n). Each cell runs `runs` independent replicates; every replicate owns a
//! fresh oracle and a random stream seeded from the cell and replicate index,
//! and produces one stratified estimate and one simple-random estimate at
//! the same budget. Replicates run on the rayon pool when the `parallel`
//! feature is enabled and are reduced in index order, so reports are
//! identical for any thread count.
//!
//! # Seeding
//!
//! All randomness flows from the master seed through [`derive_seed`], a
//! splitmix64 chain over a tuple of integers:
//!
//! * stratification of (method, K): `derive_seed(master, [0, method, K])`
//! * cell (method, allocation, K, n): `derive_seed(master, [1, method, allocation, K, n])`
//! * replicate r of a cell: `derive_seed(cell_seed, [r])`
//!
//! where `method` and `allocation` are the positions in [`Method::ALL`] and
//! [`Allocation::ALL`].

mod synthetic;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocation::{
    allocate_equal, allocate_proportional, run_opt, AllocationPlan, OptConfig, ZeroVarianceRule, DEFAULT_N_INI,
    DEFAULT_N_STEP, MIN_PER_STRATUM,
};
use crate::dataset::ScoredDataset;
use crate::density::{fit_kde, DensityModel, DEFAULT_GRID_SIZE};
use crate::estimation::{random_estimate, stratified_estimate, EstimateResult};
use crate::oracle::{BudgetedOracle, SealedLabels};
use crate::par::{self, Execution};
use crate::stratification::{stratify, Method, StrataPartition};
use crate::Error;

pub use synthetic::{generate_synthetic, SpecError, SyntheticSpec, SyntheticStratum, Z_RANGE};

pub const DEFAULT_RUNS: usize = 3000;
pub const REPORT_HEADER: &str = "method,allocation,K,n,runs,mae_pct,mvr,mean_estimate,empirical_var,excluded_runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Allocation {
    Pro,
    Equ,
    OptA1,
    OptA2,
    /// Simple random sampling over the whole set, ignoring the strata.
    Random,
}

impl Allocation {
    pub const ALL: [Allocation; 5] = [
        Allocation::Pro,
        Allocation::Equ,
        Allocation::OptA1,
        Allocation::OptA2,
        Allocation::Random,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Allocation::Pro => "pro",
            Allocation::Equ => "equ",
            Allocation::OptA1 => "opt-a1",
            Allocation::OptA2 => "opt-a2",
            Allocation::Random => "random",
        }
    }

    /// Smallest budget the allocation accepts for K strata.
    pub fn min_budget(self, k: usize, n_ini: usize) -> usize {
        match self {
            Allocation::Pro | Allocation::Equ => MIN_PER_STRATUM * k,
            Allocation::OptA1 | Allocation::OptA2 => n_ini * k,
            Allocation::Random => 2,
        }
    }

    fn code(self) -> u64 {
        Allocation::ALL.iter().position(|&a| a == self).unwrap() as u64
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Allocation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Allocation::ALL
            .into_iter()
            .find(|a| a.token() == lower)
            .ok_or_else(|| format!("unknown allocation `{s}` (expected one of pro, equ, opt-a1, opt-a2, random)"))
    }
}

fn method_code(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).unwrap() as u64
}

/// How per-run variance estimates are turned into a mean variance ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MvrMode {
    /// mean(v stratified) / mean(v random).
    #[default]
    RatioOfMeans,
    /// mean(v stratified / v random); runs with v random = 0 are excluded.
    MeanOfRatios,
}

impl FromStr for MvrMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ratio-of-means" => Ok(Self::RatioOfMeans),
            "mean-of-ratios" => Ok(Self::MeanOfRatios),
            other => Err(format!("unknown MVR mode `{other}` (expected ratio-of-means or mean-of-ratios)")),
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub allocations: Vec<Allocation>,
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub n_ini: usize,
    pub n_step: usize,
    pub zero_variance: ZeroVarianceRule,
    pub bandwidth: Option<f64>,
    pub grid_size: usize,
    pub mvr_mode: MvrMode,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            allocations: Allocation::ALL.to_vec(),
            ks: (2..=10).collect(),
            ns: vec![50, 100, 200, 400],
            runs: DEFAULT_RUNS,
            seed: 0,
            n_ini: DEFAULT_N_INI,
            n_step: DEFAULT_N_STEP,
            zero_variance: ZeroVarianceRule::default(),
            bandwidth: None,
            grid_size: DEFAULT_GRID_SIZE,
            mvr_mode: MvrMode::default(),
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.runs < 2 {
            return bad(format!("runs must be at least 2, got {}", self.runs));
        }
        if self.methods.is_empty() || self.allocations.is_empty() || self.ks.is_empty() || self.ns.is_empty() {
            return bad("methods, allocations, K values and n values must all be nonempty".into());
        }
        if let Some(k) = self.ks.iter().find(|&&k| k == 0) {
            return bad(format!("K must be positive, got {k}"));
        }
        if self.n_ini < 2 {
            return bad(format!("n_ini must be at least 2, got {}", self.n_ini));
        }
        if self.n_step == 0 {
            return bad("n_step must be at least 1".into());
        }
        for &a in &self.allocations {
            for &k in &self.ks {
                for &n in &self.ns {
                    let min = a.min_budget(k, self.n_ini);
                    if n < min {
                        return bad(format!("n = {n} is below the minimum {min} for {a} with K = {k}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.methods.len() * self.allocations.len() * self.ks.len() * self.ns.len()
    }
}

/// Aggregates of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub allocation: Allocation,
    /// Requested number of strata.
    pub k: usize,
    /// Strata actually formed after empty strata were merged.
    pub effective_k: usize,
    pub n: usize,
    pub runs: usize,
    /// Mean of |estimate - A| in percentage points.
    pub mae_pct: f64,
    pub mvr: f64,
    /// Standard error of `mvr` (delta method for the ratio of means).
    pub mvr_se: f64,
    pub mean_estimate: f64,
    /// Sample variance of the estimates across runs.
    pub empirical_var: f64,
    /// Mean variance estimate of the cell's estimator over included runs.
    pub mean_variance: f64,
    /// Mean variance estimate of the paired random estimator over included runs.
    pub mean_random_variance: f64,
    pub excluded_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub true_accuracy: f64,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, method: Method, allocation: Allocation, k: usize, n: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.allocation == allocation && r.k == k && r.n == n)
    }

    /// (n, MAE) pairs of one (method, allocation, K) series, ascending in n.
    pub fn mae_curve(&self, method: Method, allocation: Allocation, k: usize) -> Vec<(usize, f64)> {
        let mut curve: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.allocation == allocation && r.k == k)
            .map(|r| (r.n, r.mae_pct))
            .collect();
        curve.sort_by_key(|&(n, _)| n);
        curve
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method, r.allocation, r.k, r.n, r.runs, r.mae_pct, r.mvr, r.mean_estimate, r.empirical_var, r.excluded_runs
            )?;
        }
        out.flush()
    }
}

/// Smallest swept n whose MAE is at or below `target_pct`.
pub fn n_for_error_target(curve: &[(usize, f64)], target_pct: f64) -> Option<usize> {
    let mut sorted = curve.to_vec();
    sorted.sort_by_key(|&(n, _)| n);
    sorted.into_iter().find(|&(_, mae)| mae <= target_pct).map(|(n, _)| n)
}

#[derive(Debug, Clone, Copy)]
struct Replicate {
    estimate: f64,
    variance: Option<f64>,
    random_variance: Option<f64>,
}

enum CellPlan {
    Fixed(AllocationPlan),
    Opt(OptConfig),
    Random,
}

fn run_replicate(
    labels: &Arc<SealedLabels>,
    partition: &StrataPartition,
    plan: &CellPlan,
    n: usize,
    seed: u64,
) -> Result<Replicate, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = BudgetedOracle::from_sealed(Arc::clone(labels), n);
    let result: EstimateResult = match plan {
        CellPlan::Fixed(p) => stratified_estimate(&mut oracle, partition, p, &mut rng)?,
        CellPlan::Opt(cfg) => run_opt(&mut oracle, partition, cfg, &mut rng)?,
        CellPlan::Random => random_estimate(&mut oracle, n, &mut rng)?,
    };
    let mut control = BudgetedOracle::from_sealed(Arc::clone(labels), n);
    let random = random_estimate(&mut control, n, &mut rng)?;
    Ok(Replicate {
        estimate: result.estimate,
        variance: result.variance,
        random_variance: random.variance,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

struct Aggregate {
    mae_pct: f64,
    mean_estimate: f64,
    empirical_var: f64,
    mvr: f64,
    mvr_se: f64,
    mean_variance: f64,
    mean_random_variance: f64,
    excluded: usize,
}

fn aggregate(reps: &[Replicate], truth: f64, mode: MvrMode) -> Aggregate {
    let estimates: Vec<f64> = reps.iter().map(|r| r.estimate).collect();
    let mae_pct = 100.0 * reps.iter().map(|r| (r.estimate - truth).abs()).sum::<f64>() / reps.len() as f64;

    let pairs: Vec<(f64, f64)> = reps
        .iter()
        .filter_map(|r| match (r.variance, r.random_variance) {
            (Some(s), Some(v)) if mode == MvrMode::RatioOfMeans || v > 0.0 => Some((s, v)),
            _ => None,
        })
        .collect();
    let excluded = reps.len() - pairs.len();
    let ys: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let xs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let m = pairs.len() as f64;

    let (mvr, mvr_se) = if pairs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        match mode {
            MvrMode::RatioOfMeans => {
                let (my, mx) = (mean(&ys), mean(&xs));
                let ratio = my / mx;
                let resid: Vec<f64> = ys.iter().zip(&xs).map(|(y, x)| y - ratio * x).collect();
                let se = if pairs.len() > 1 { (sample_var(&resid) / m).sqrt() / mx } else { f64::NAN };
                (ratio, se)
            }
            MvrMode::MeanOfRatios => {
                let ratios: Vec<f64> = ys.iter().zip(&xs).map(|(y, x)| y / x).collect();
                let se = if pairs.len() > 1 { (sample_var(&ratios) / m).sqrt() } else { f64::NAN };
                (mean(&ratios), se)
            }
        }
    };

    Aggregate {
        mae_pct,
        mean_estimate: mean(&estimates),
        empirical_var: sample_var(&estimates),
        mvr,
        mvr_se,
        mean_variance: if ys.is_empty() { f64::NAN } else { mean(&ys) },
        mean_random_variance: if xs.is_empty() { f64::NAN } else { mean(&xs) },
        excluded,
    }
}

pub type PartitionSet = Vec<((Method, usize), StrataPartition)>;

/// Stratifies the dataset once for every (method, K) of the grid.
pub fn build_partitions(dataset: &ScoredDataset, config: &ExperimentConfig) -> Result<PartitionSet, Error> {
    let z = dataset.derive_z();
    let density: Option<DensityModel> = if config.methods.iter().any(|m| m.needs_density()) {
        Some(fit_kde(&z, config.bandwidth, config.grid_size)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for &method in &config.methods {
        for &k in &config.ks {
            let seed = derive_seed(config.seed, &[0, method_code(method), k as u64]);
            let partition = stratify(&z, method, k, seed, density.as_ref())?;
            out.push(((method, k), partition));
        }
    }
    Ok(out)
}

/// Runs the full grid. Rows are ordered method, allocation, K, n as listed
/// in the config.
pub fn run_experiment(dataset: &ScoredDataset, config: &ExperimentConfig) -> Result<ExperimentReport, Error> {
    run_experiment_with_progress(dataset, config, |_, _| {})
}

/// [`run_experiment`] calling `progress(done, total)` after each cell.
pub fn run_experiment_with_progress(
    dataset: &ScoredDataset,
    config: &ExperimentConfig,
    mut progress: impl FnMut(usize, usize),
) -> Result<ExperimentReport, Error> {
    config.validate()?;
    let labels = SealedLabels::from_dataset(dataset)?;
    let truth = labels.true_accuracy();
    let partitions = build_partitions(dataset, config)?;

    let mut rows = Vec::with_capacity(config.cell_count());
    for &method in &config.methods {
        for &allocation in &config.allocations {
            for &k in &config.ks {
                let partition = &partitions
                    .iter()
                    .find(|((m, kk), _)| *m == method && *kk == k)
                    .expect("partition built for every (method, K)")
                    .1;
                for &n in &config.ns {
                    let plan = match allocation {
                        Allocation::Pro => CellPlan::Fixed(allocate_proportional(partition.weights(), n)?),
                        Allocation::Equ => CellPlan::Fixed(allocate_equal(partition.k(), n)?),
                        Allocation::OptA1 => CellPlan::Opt(OptConfig {
                            zero_variance: config.zero_variance,
                            ..OptConfig::two_phase(n, config.n_ini)
                        }),
                        Allocation::OptA2 => CellPlan::Opt(OptConfig {
                            zero_variance: config.zero_variance,
                            ..OptConfig::iterative(n, config.n_ini, config.n_step)
                        }),
                        Allocation::Random => CellPlan::Random,
                    };
                    let cell_seed = derive_seed(
                        config.seed,
                        &[1, method_code(method), allocation.code(), k as u64, n as u64],
                    );
                    let reps = par::map_indexed(config.runs, config.execution, |r| {
                        run_replicate(&labels, partition, &plan, n, derive_seed(cell_seed, &[r as u64]))
                    })
                    .into_iter()
                    .collect::<Result<Vec<_>, _>>()?;
                    let agg = aggregate(&reps, truth, config.mvr_mode);
                    rows.push(ReportRow {
                        method,
                        allocation,
                        k,
                        effective_k: partition.k(),
                        n,
                        runs: config.runs,
                        mae_pct: agg.mae_pct,
                        mvr: agg.mvr,
                        mvr_se: agg.mvr_se,
                        mean_estimate: agg.mean_estimate,
                        empirical_var: agg.empirical_var,
                        mean_variance: agg.mean_variance,
                        mean_random_variance: agg.mean_random_variance,
                        excluded_runs: agg.excluded,
                    });
                    progress(rows.len(), config.cell_count());
                }
            }
        }
    }
    Ok(ExperimentReport {
        true_accuracy: truth,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    /// Requested overall accuracy.
    pub level: f64,
    /// Accuracy of the generated dataset.
    pub accuracy: f64,
    pub method: Method,
    pub k: usize,
    pub n: usize,
    pub mvr: f64,
    pub mvr_se: f64,
}

/// Rescales the base spec's stratum accuracies to each level (same z
/// structure, same data seed), and runs OPT-A2 cells of `config` on each.
pub fn accuracy_dependence_study(
    base: &SyntheticSpec,
    levels: &[f64],
    config: &ExperimentConfig,
    data_seed: u64,
) -> Result<Vec<LevelRow>, Error> {
    if levels.is_empty() {
        return Err(Error::Config("at least one accuracy level is required".into()));
    }
    let config = ExperimentConfig {
        allocations: vec![Allocation::OptA2],
        ..config.clone()
    };
    let mut table = Vec::new();
    for &level in levels {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::Config(format!("accuracy level {level} outside [0, 1]")));
        }
        let spec = base.with_accuracy_level(level);
        let dataset = generate_synthetic(&spec, data_seed)?;
        let report = run_experiment(&dataset, &config)?;
        table.extend(report.rows.iter().map(|r| LevelRow {
            level,
            accuracy: report.true_accuracy,
            method: r.method,
            k: r.k,
            n: r.n,
            mvr: r.mvr,
            mvr_se: r.mvr_se,
        }));
    }
    Ok(table)
}
