use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use strateval_core::allocation::{
    allocate_equal, allocate_proportional, run_opt, OptConfig, ZeroVarianceRule, DEFAULT_N_INI, DEFAULT_N_STEP,
};
use strateval_core::dataset::load_scored_csv;
use strateval_core::density::{fit_kde, DEFAULT_GRID_SIZE};
use strateval_core::estimation::{random_estimate, stratified_estimate};
use strateval_core::harness::{
    derive_seed, generate_synthetic, run_experiment_with_progress, Allocation, ExperimentConfig, MvrMode,
    SyntheticSpec, DEFAULT_RUNS,
};
use strateval_core::par::{self, Execution};
use strateval_core::stratification::{stratify, Method, StrataPartition};
use strateval_core::{BudgetedOracle, Error, ScoreKind, ScoredDataset};

#[derive(Parser)]
#[command(name = "strateval", version, about = "Estimate classifier accuracy from a small stratified labeled sample")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic simulation CSV from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratify a scored dataset and write `id,stratum`.
    Stratify {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        strata: StrataArgs,
        #[arg(long)]
        seed: u64,
        /// Output path; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label a budget of n instances and estimate accuracy.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        strata: StrataArgs,
        #[arg(long)]
        alloc: Allocation,
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        opt: OptArgs,
        #[arg(long)]
        seed: u64,
        /// Only plan: print the per-stratum allocation without labeling.
        #[arg(long)]
        no_truth: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte-Carlo experiment grid and write the report CSV.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', required = true)]
        alloc: Vec<Allocation>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,7,8,9,10")]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        #[command(flatten)]
        opt: OptArgs,
        /// Kernel bandwidth for SQRT/CBRT; Silverman's rule when omitted.
        #[arg(long)]
        bandwidth: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid_size: usize,
        /// ratio-of-means or mean-of-ratios.
        #[arg(long, default_value = "ratio-of-means")]
        mvr: MvrMode,
        /// Worker threads; output does not depend on this.
        #[arg(long)]
        jobs: Option<usize>,
        /// Run replicates on the calling thread only.
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Suppress the per-cell progress counter.
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Score column kind: prob or margin.
    #[arg(long, default_value = "prob")]
    kind: ScoreKind,
}

#[derive(Args)]
struct StrataArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = DEFAULT_N_INI)]
    n_ini: usize,
    #[arg(long, default_value_t = DEFAULT_N_STEP)]
    n_step: usize,
    /// How OPT treats strata whose labels so far are all equal: smoothed or literal.
    #[arg(long, default_value = "smoothed")]
    zero_variance: ZeroVarianceRule,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { spec, seed, out } => {
            let spec = SyntheticSpec::load(&spec).map_err(Error::from)?;
            let dataset = generate_synthetic(&spec, seed).map_err(Error::from)?;
            dataset.write_csv(&out).map_err(Error::from)?;
            Ok(())
        }
        Command::Stratify { data, strata, seed, out } => {
            let dataset = load(&data)?;
            let partition = build_partition(&dataset, &strata, seed)?;
            with_output(out.as_deref(), |w| partition.write_csv(w, dataset.ids()))
        }
        Command::Estimate {
            data,
            strata,
            alloc,
            n,
            opt,
            seed,
            no_truth,
            out,
        } => {
            let dataset = load(&data)?;
            let partition = build_partition(&dataset, &strata, seed)?;
            let min = alloc.min_budget(partition.k(), opt.n_ini);
            if n < min {
                return Err(Failure::Usage(format!(
                    "n = {n} is below the minimum {min} for {alloc} with {} strata",
                    partition.k()
                )));
            }
            if no_truth {
                let rows = plan_rows(&partition, alloc, n, &opt)?;
                return with_output(out.as_deref(), |w| {
                    writeln!(w, "stratum,size,weight,planned_n")?;
                    for (k, planned) in rows.iter().enumerate() {
                        writeln!(w, "{k},{},{},{planned}", partition.members(k).len(), partition.weights()[k])?;
                    }
                    Ok(())
                });
            }
            let mut oracle = BudgetedOracle::new(&dataset, n).map_err(Error::from)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
            let result = match alloc {
                Allocation::Pro => {
                    let plan = allocate_proportional(partition.weights(), n).map_err(Error::from)?;
                    stratified_estimate(&mut oracle, &partition, &plan, &mut rng).map_err(Error::from)?
                }
                Allocation::Equ => {
                    let plan = allocate_equal(partition.k(), n).map_err(Error::from)?;
                    stratified_estimate(&mut oracle, &partition, &plan, &mut rng).map_err(Error::from)?
                }
                Allocation::OptA1 | Allocation::OptA2 => {
                    let config = opt_config(alloc, n, &opt);
                    run_opt(&mut oracle, &partition, &config, &mut rng).map_err(Error::from)?
                }
                Allocation::Random => random_estimate(&mut oracle, n, &mut rng).map_err(Error::from)?,
            };
            let variance = result.variance.map_or_else(|| "NA".to_string(), |v| v.to_string());
            with_output(out.as_deref(), |w| {
                writeln!(w, "estimate,variance_estimate,samples_used")?;
                writeln!(w, "{},{variance},{}", result.estimate, result.samples_used)
            })
        }
        Command::Sweep {
            data,
            methods,
            alloc,
            k,
            n,
            runs,
            opt,
            bandwidth,
            grid_size,
            mvr,
            jobs,
            sequential,
            seed,
            out,
            quiet,
        } => {
            let dataset = load(&data)?;
            let config = ExperimentConfig {
                methods,
                allocations: alloc,
                ks: k,
                ns: n,
                runs,
                seed,
                n_ini: opt.n_ini,
                n_step: opt.n_step,
                zero_variance: opt.zero_variance,
                bandwidth,
                grid_size,
                mvr_mode: mvr,
                execution: if sequential { Execution::Sequential } else { Execution::Parallel },
            };
            let report = par::with_jobs(jobs, || {
                run_experiment_with_progress(&dataset, &config, |done, total| {
                    if !quiet {
                        eprintln!("cell {done}/{total}");
                    }
                })
            })?;
            let file = File::create(&out).map_err(|e| io_failure(&out, e))?;
            report.write_csv(BufWriter::new(file)).map_err(|e| io_failure(&out, e))
        }
    }
}

fn load(args: &DataArgs) -> Result<ScoredDataset, Failure> {
    Ok(load_scored_csv(&args.data, args.kind).map_err(Error::from)?)
}

/// Same stratification seed as the sweep uses for (method, K).
fn build_partition(dataset: &ScoredDataset, args: &StrataArgs, seed: u64) -> Result<StrataPartition, Failure> {
    if args.k == 0 {
        return Err(Failure::Usage("--k must be at least 1".into()));
    }
    let z = dataset.derive_z();
    let density = if args.method.needs_density() {
        Some(fit_kde(&z, args.bandwidth, args.grid_size).map_err(Error::from)?)
    } else {
        None
    };
    let method_code = Method::ALL.iter().position(|&m| m == args.method).unwrap() as u64;
    let stratum_seed = derive_seed(seed, &[0, method_code, args.k as u64]);
    Ok(stratify(&z, args.method, args.k, stratum_seed, density.as_ref()).map_err(Error::from)?)
}

fn opt_config(alloc: Allocation, n: usize, opt: &OptArgs) -> OptConfig {
    let base = if alloc == Allocation::OptA1 {
        OptConfig::two_phase(n, opt.n_ini)
    } else {
        OptConfig::iterative(n, opt.n_ini, opt.n_step)
    };
    OptConfig {
        zero_variance: opt.zero_variance,
        ..base
    }
}

/// Per-stratum label counts for planning. OPT procedures can only commit
/// the pilot up front.
fn plan_rows(partition: &StrataPartition, alloc: Allocation, n: usize, opt: &OptArgs) -> Result<Vec<usize>, Failure> {
    Ok(match alloc {
        Allocation::Pro => allocate_proportional(partition.weights(), n).map_err(Error::from)?.counts().to_vec(),
        Allocation::Equ => allocate_equal(partition.k(), n).map_err(Error::from)?.counts().to_vec(),
        Allocation::OptA1 | Allocation::OptA2 => vec![opt.n_ini; partition.k()],
        Allocation::Random => {
            return Err(Failure::Usage("--no-truth planning needs a stratified allocation".into()));
        }
    })
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| io_failure(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|()| w.flush()).map_err(|e| io_failure(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            match f(&mut lock).and_then(|()| lock.flush()) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::Data(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}
