//! `kflows` — sparse kernel selection from the command line.
//!
//! Every subcommand writes a JSON document (to `--out` or stdout). Failures
//! print a one-line JSON error record on stderr and exit with status 1;
//! usage errors exit with status 2. Set `KFLOWS_LOG` (e.g. `info`, `debug`)
//! to control log verbosity on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kflows::harness::experiment::{
    run_bench, run_experiment, write_json, BenchConfig, ExperimentConfig, SelectionMode, REPORT_SCHEMA_VERSION,
};
use kflows::harness::synth::{benchmark_dictionary, cubic_dataset, gen_gp_dataset};
use kflows::harness::{load_csv, load_points};
use kflows::mdl::BetaInit;
use kflows::rkhs::{fit, Posterior};
use kflows::sparse::DEFAULT_LAMBDAS;
use kflows::{Error, Exec, FittedModel, KernelDictionary, KfConfig, Nugget, OptConfig, Result, SupportSet};
use serde::Serialize;

const LOG_ENV: &str = "KFLOWS_LOG";

#[derive(Parser)]
#[command(name = "kflows", version, about = "Sparse Kernel Flows with MDL kernel selection")]
#[command(after_help = "Log verbosity is read from KFLOWS_LOG (error, warn, info, debug, trace; default warn).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV
    Gen(GenArgs),
    /// Fit the RKHS interpolant of a dictionary to data and save the model
    Fit(FitArgs),
    /// Evaluate a saved model (and its posterior variance) at new points
    Predict(PredictArgs),
    /// Exhaustive MDL search over every support of the dictionary
    Select(SelectArgs),
    /// L1-penalized sparse fit over a λ sweep, rescored by MDL
    Sparse(SparseArgs),
    /// Six-kernel support-recovery benchmark
    Bench(BenchArgs),
    /// Run an experiment described by a TOML config
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// GP draw from a dictionary restricted to --support
    Gp,
    /// y = 1 − 2x + 0.5x² + 3x³ + noise on x ∈ [−1,1]
    Cubic,
}

#[derive(Args)]
struct GenArgs {
    /// Kind of synthetic data
    #[arg(long, value_enum, default_value = "gp")]
    kind: GenKind,
    /// Dictionary TOML for GP draws [default: built-in six-kernel benchmark]
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Active kernel indices for GP draws, comma separated [default: 0,3 for the benchmark, all otherwise]
    #[arg(long, value_delimiter = ',')]
    support: Option<Vec<usize>>,
    /// Number of points
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Input dimension (GP only)
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Standard deviation of the additive noise
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV (header x1..xd,y)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV: feature columns then one target column
    #[arg(long)]
    data: PathBuf,
    /// Dictionary TOML [default: built-in six-kernel benchmark]
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Diagonal regularization: rel:<v> (times mean diagonal) or abs:<v>
    #[arg(long, default_value = "rel:1e-8")]
    nugget: Nugget,
    /// Output model JSON [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Model JSON written by `fit`
    #[arg(long)]
    model: PathBuf,
    /// CSV of query points; a trailing target column is ignored
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with prediction and variance columns [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    /// Training CSV: feature columns then one target column
    #[arg(long)]
    data: PathBuf,
    /// Dictionary TOML [default: built-in six-kernel benchmark]
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Seed for batch sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for the optimizer's training batches
    #[arg(long, default_value_t = 0)]
    opt_seed: u64,
    /// Batch pairs averaged in the Kernel Flows loss
    #[arg(long, default_value_t = 32)]
    batches: usize,
    /// Batch size (half of it forms the sub-batch)
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Diagonal regularization: rel:<v> (times mean diagonal) or abs:<v>
    #[arg(long, default_value = "rel:1e-8")]
    nugget: Nugget,
    /// Optimizer iterations per fit
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// Initial step size
    #[arg(long, default_value_t = 1e-2)]
    step: f64,
    /// Keep dictionary β instead of the median-distance heuristic
    #[arg(long)]
    keep_beta: bool,
    /// Run single-threaded
    #[arg(long)]
    sequential: bool,
    /// Output report JSON [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct SparseArgs {
    #[command(flatten)]
    search: SearchArgs,
    /// L1 penalties to sweep, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS)]
    lambda: Vec<f64>,
    /// Directory receiving one iterate-path TSV per λ
    #[arg(long)]
    path_dump: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Number of independent trials
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Points per trial
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Noise standard deviation of the GP draws
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Base seed; per-trial seeds are derived from it
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Batch pairs averaged in the Kernel Flows loss
    #[arg(long, default_value_t = 32)]
    batches: usize,
    /// Batch size
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Diagonal regularization: rel:<v> or abs:<v>
    #[arg(long, default_value = "rel:1e-8")]
    nugget: Nugget,
    /// Optimizer iterations per fit
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// L1 penalties to sweep, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS)]
    lambda: Vec<f64>,
    /// Run single-threaded
    #[arg(long)]
    sequential: bool,
    /// Output report JSON [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config TOML
    config: PathBuf,
    /// Override the config's output path
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn load_dict(path: Option<&Path>) -> Result<KernelDictionary> {
    match path {
        Some(p) => KernelDictionary::load(p),
        None => Ok(benchmark_dictionary()),
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let data = match a.kind {
        GenKind::Cubic => {
            if !(a.noise.is_finite() && a.noise >= 0.0) {
                return Err(Error::Input(format!("noise must be nonnegative, got {}", a.noise)));
            }
            cubic_dataset(a.n, a.noise, a.seed)
        }
        GenKind::Gp => {
            let dict = load_dict(a.dict.as_deref())?;
            let support = match (a.support, &a.dict) {
                (Some(s), _) => SupportSet::new(s)?,
                (None, None) => kflows::harness::synth::benchmark_support(),
                (None, Some(_)) => SupportSet::full(dict.len()),
            };
            gen_gp_dataset(&dict, &support, a.n, a.dim, a.noise, a.seed)?
        }
    };
    data.write_csv(&a.out)?;
    log::info!("wrote {} rows to {}", data.len(), a.out.display());
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let dict = load_dict(a.dict.as_deref())?;
    let data = load_csv(&a.data)?;
    let model = fit(&dict, data.x(), data.y(), a.nugget)?;
    match &a.out {
        Some(p) => model.save(p),
        None => {
            println!("{}", model.to_json()?);
            Ok(())
        }
    }
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let model = FittedModel::load(&a.model)?;
    let (header, mut rows) = load_points(&a.data)?;
    let d = model.input_dim();
    let ncols = header.len();
    if ncols == d + 1 {
        rows.iter_mut().for_each(|r| {
            r.pop();
        });
    } else if ncols != d {
        return Err(Error::Dimension { expected: d, got: ncols });
    }
    let preds = model.predict_many(&rows, Exec::default())?;
    let post = Posterior::new(model.kernel(), model.support_points(), model.nugget())?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(&mut out);
    let mut cols: Vec<String> = header[..d].to_vec();
    cols.extend(["prediction".into(), "variance".into()]);
    w.write_record(&cols)?;
    for (row, p) in rows.iter().zip(preds) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(p.to_string());
        rec.push(post.variance(row)?.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn search_config(s: &SearchArgs, mode: SelectionMode) -> ExperimentConfig {
    ExperimentConfig {
        dictionary: s.dict.clone(),
        data: Some(s.data.clone()),
        generate: None,
        mode,
        lambdas: DEFAULT_LAMBDAS.to_vec(),
        kf: KfConfig {
            batch_size: s.batch_size,
            n_batches: s.batches,
            seed: s.seed,
            nugget: s.nugget,
            exec: exec(s.sequential),
        },
        opt: OptConfig {
            iterations: s.iterations,
            step: s.step,
            seed: s.opt_seed,
            beta_init: if s.keep_beta {
                BetaInit::FromDictionary
            } else {
                BetaInit::MedianHeuristic
            },
            ..OptConfig::default()
        },
        output: None,
        path_dump: None,
    }
}

fn run_search(cfg: ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let report = run_experiment(&cfg)?;
    emit(out, &report)
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        trials: a.trials,
        n: a.n,
        noise_sd: a.noise,
        seed: a.seed,
        kf: KfConfig {
            batch_size: a.batch_size,
            n_batches: a.batches,
            seed: a.seed,
            nugget: a.nugget,
            exec: exec(a.sequential),
        },
        opt: OptConfig {
            iterations: a.iterations,
            ..defaults.opt.clone()
        },
        lambdas: a.lambda,
        ..defaults
    };
    let report = run_bench(&cfg)?;
    log::info!(
        "exhaustive recovery {:.2}, sparse recovery {:.2}, sparse/exhaustive match {:.2}",
        report.exhaustive_recovery_rate,
        report.sparse_recovery_rate,
        report.sparse_match_rate
    );
    emit(a.out.as_deref(), &report)
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if a.out.is_some() {
        cfg.output = a.out;
    }
    let report = run_experiment(&cfg)?;
    if cfg.output.is_none() {
        emit(None, &report)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Select(a) => {
            let cfg = search_config(&a.search, SelectionMode::Exhaustive);
            run_search(cfg, a.search.out.as_deref())
        }
        Command::Sparse(a) => {
            let cfg = ExperimentConfig {
                lambdas: a.lambda,
                path_dump: a.path_dump,
                ..search_config(&a.search, SelectionMode::Sparse)
            };
            run_search(cfg, a.search.out.as_deref())
        }
        Command::Bench(a) => bench_cmd(a),
        Command::Run(a) => run_cmd(a),
    }
}

#[derive(Serialize)]
struct ErrorRecord {
    schema_version: u32,
    error: ErrorBody,
}

#[derive(Serialize)]
struct ErrorBody {
    kind: &'static str,
    message: String,
}

fn error_record(e: &Error) -> String {
    let record = ErrorRecord {
        schema_version: REPORT_SCHEMA_VERSION,
        error: ErrorBody {
            kind: e.kind(),
            message: e.to_string(),
        },
    };
    serde_json::to_string(&record).expect("error record serializes")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
