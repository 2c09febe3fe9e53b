//! Experiment orchestration and structured JSON reports.
//!
//! Every report carries `schema_version`, the seeds needed to replay it, and
//! a top-level `timing` object. Everything outside `timing` is a
//! deterministic function of the configuration.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::synth::{benchmark_dictionary, benchmark_support, gen_gp_dataset};
use super::{load_csv, Dataset, Provenance};
use crate::error::{read_file, write_file, Error, Result};
use crate::kernels::KernelDictionary;
use crate::kf_loss::{derive_seed, KfConfig};
use crate::mdl::{exhaustive_mdl_select, BetaInit, MdlScore, OptConfig, SelectionReport, SupportSet};
use crate::sparse::{lambda_sweep, LambdaSweep, SparseFitResult, DEFAULT_LAMBDAS};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Exhaustive,
    Sparse,
    #[default]
    Both,
}

/// Synthetic GP data drawn from the dictionary restricted to `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub n: usize,
    #[serde(default = "one")]
    pub dim: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub support: Vec<usize>,
}

fn one() -> usize {
    1
}

/// Experiment description, usually read from TOML:
///
/// ```toml
/// dictionary = "dict.toml"     # omit for the built-in six-kernel benchmark
/// data = "data.csv"            # or a [generate] table
/// mode = "both"                # exhaustive | sparse | both
/// lambdas = [0.001, 0.01, 0.1, 1.0]
/// output = "report.json"
///
/// [kf]
/// batch_size = 32
/// n_batches = 32
/// seed = 0
/// nugget = { kind = "relative", value = 1e-8 }
///
/// [opt]
/// iterations = 500
/// seed = 0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
    #[serde(default)]
    pub mode: SelectionMode,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub kf: KfConfig,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Directory receiving one iterate-path TSV per λ (`path_<i>.tsv`).
    #[serde(default)]
    pub path_dump: Option<PathBuf>,
}

fn default_lambdas() -> Vec<f64> {
    DEFAULT_LAMBDAS.to_vec()
}

impl ExperimentConfig {
    /// Reads a TOML config; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ExperimentConfig = toml::from_str(&read_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dictionary, &mut cfg.data, &mut cfg.output, &mut cfg.path_dump].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kf.batch_size < 2 {
            return Err(Error::Input("kf.batch_size must be at least 2".into()));
        }
        if self.kf.n_batches == 0 {
            return Err(Error::Input("kf.n_batches must be positive".into()));
        }
        if self.opt.iterations == 0 {
            return Err(Error::Input("opt.iterations must be positive".into()));
        }
        if self.mode != SelectionMode::Exhaustive && self.lambdas.is_empty() {
            return Err(Error::Input("lambda sweep is empty".into()));
        }
        match (&self.data, &self.generate) {
            (Some(_), Some(_)) => return Err(Error::Input("give either data or generate, not both".into())),
            (None, None) => return Err(Error::Input("one of data or generate is required".into())),
            _ => {}
        }
        for p in [&self.dictionary, &self.data].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Input(format!("{} does not exist", p.display())));
            }
        }
        self.opt.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub dim: usize,
    pub provenance: Provenance,
    pub seed: Option<u64>,
    pub source: Option<PathBuf>,
}

impl DatasetSummary {
    fn of(d: &Dataset, source: Option<PathBuf>) -> Self {
        DatasetSummary {
            n: d.len(),
            dim: d.dim(),
            provenance: d.provenance,
            seed: d.seed,
            source,
        }
    }
}

/// A sweep member without its iterate path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSummary {
    pub lambda: f64,
    pub support: SupportSet,
    pub theta_final: Vec<f64>,
    pub beta_final: Vec<Vec<f64>>,
    pub objective: f64,
    pub initial_objective: f64,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub all_pruned: bool,
    pub mdl_rescore: Option<MdlScore>,
}

impl From<&SparseFitResult> for SparseSummary {
    fn from(r: &SparseFitResult) -> Self {
        SparseSummary {
            lambda: r.lambda,
            support: r.support_extracted.clone(),
            theta_final: r.theta_final.clone(),
            beta_final: r.beta_final.clone(),
            objective: r.objective,
            initial_objective: r.initial_objective,
            best_iteration: r.best_iteration,
            iterations_run: r.iterations_run,
            all_pruned: r.all_pruned,
            mdl_rescore: r.mdl_rescore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub selected: usize,
    pub support: SupportSet,
    pub members: Vec<SparseSummary>,
}

impl From<&LambdaSweep> for SweepSummary {
    fn from(s: &LambdaSweep) -> Self {
        SweepSummary {
            selected: s.selected,
            support: s.selected().support_extracted.clone(),
            members: s.results.iter().map(SparseSummary::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

impl Timing {
    fn since(start: Instant, wall: SystemTime) -> Self {
        Timing {
            started_unix_ms: wall.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            elapsed_ms: start.elapsed().as_millis(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub kind: String,
    pub dataset: DatasetSummary,
    pub dictionary: KernelDictionary,
    pub mode: SelectionMode,
    pub kf: KfConfig,
    pub opt: OptConfig,
    pub lambdas: Vec<f64>,
    pub exhaustive: Option<SelectionReport>,
    pub sparse: Option<SweepSummary>,
    /// Present in `both` mode: whether the two selections agree.
    pub supports_match: Option<bool>,
    pub timing: Timing,
}

/// Runs ingest/generate → select → rescore and writes the report to
/// `config.output` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let wall = SystemTime::now();
    let start = Instant::now();
    let dict = match &config.dictionary {
        Some(p) => KernelDictionary::load(p)?,
        None => benchmark_dictionary(),
    };
    let (data, source) = match (&config.data, &config.generate) {
        (Some(p), _) => (load_csv(p)?, Some(p.clone())),
        (None, Some(g)) => {
            let support = SupportSet::new(g.support.clone())?;
            (gen_gp_dataset(&dict, &support, g.n, g.dim, g.noise_sd, g.seed)?, None)
        }
        (None, None) => unreachable!("validated"),
    };
    if data.len() < 2 {
        return Err(Error::Input("need at least two data points".into()));
    }

    let exhaustive = match config.mode {
        SelectionMode::Exhaustive | SelectionMode::Both => {
            Some(exhaustive_mdl_select(&dict, &data, &config.kf, &config.opt)?)
        }
        SelectionMode::Sparse => None,
    };
    let sparse = match config.mode {
        SelectionMode::Sparse | SelectionMode::Both => {
            let sweep = lambda_sweep(&dict, &data, &config.lambdas, &config.kf, &config.opt)?;
            if let Some(dir) = &config.path_dump {
                std::fs::create_dir_all(dir)?;
                for (i, r) in sweep.results.iter().enumerate() {
                    r.write_path(dir.join(format!("path_{i}.tsv")))?;
                }
            }
            Some(SweepSummary::from(&sweep))
        }
        SelectionMode::Exhaustive => None,
    };
    let supports_match = match (&exhaustive, &sparse) {
        (Some(e), Some(s)) => Some(e.support == s.support),
        _ => None,
    };
    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "experiment".into(),
        dataset: DatasetSummary::of(&data, source),
        dictionary: dict,
        mode: config.mode,
        kf: config.kf.clone(),
        opt: config.opt.clone(),
        lambdas: config.lambdas.clone(),
        exhaustive,
        sparse,
        supports_match,
        timing: Timing::since(start, wall),
    };
    if let Some(out) = &config.output {
        write_json(out, &report)?;
    }
    Ok(report)
}

/// Settings for the six-kernel recovery benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub trials: usize,
    pub n: usize,
    pub dim: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub kf: KfConfig,
    pub opt: OptConfig,
    pub lambdas: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            trials: 50,
            n: 400,
            dim: 1,
            noise_sd: 0.05,
            seed: 0,
            kf: KfConfig::default(),
            // The benchmark dictionary fixes distinct length scales for its two
            // gaussians; a median reset would make them identical.
            opt: OptConfig {
                beta_init: BetaInit::FromDictionary,
                ..OptConfig::default()
            },
            lambdas: DEFAULT_LAMBDAS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub data_seed: u64,
    pub kf_seed: u64,
    pub opt_seed: u64,
    pub exhaustive_support: SupportSet,
    pub exhaustive_score: f64,
    pub exhaustive_mean_rho: f64,
    /// `None` when every λ pruned all kernels.
    pub sparse_support: Option<SupportSet>,
    pub sparse_score: Option<f64>,
    pub exhaustive_recovers: bool,
    pub sparse_recovers: bool,
    pub sparse_matches_exhaustive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub kind: String,
    pub config: BenchConfig,
    pub true_support: SupportSet,
    pub dictionary: KernelDictionary,
    pub exhaustive_recovery_rate: f64,
    pub sparse_recovery_rate: f64,
    pub sparse_match_rate: f64,
    /// How often each support was selected by exhaustive search.
    pub exhaustive_support_counts: Vec<(SupportSet, usize)>,
    pub trials: Vec<TrialRecord>,
    pub timing: Timing,
}

const BENCH_DATA: u64 = 1;
const BENCH_KF: u64 = 2;
const BENCH_OPT: u64 = 3;

fn run_trial(cfg: &BenchConfig, dict: &KernelDictionary, truth: &SupportSet, t: usize) -> Result<TrialRecord> {
    let data_seed = derive_seed(cfg.seed, BENCH_DATA, t as u64);
    let kf = cfg.kf.with_seed(derive_seed(cfg.seed, BENCH_KF, t as u64));
    let opt = OptConfig {
        seed: derive_seed(cfg.seed, BENCH_OPT, t as u64),
        ..cfg.opt.clone()
    };
    let data = gen_gp_dataset(dict, truth, cfg.n, cfg.dim, cfg.noise_sd, data_seed)?;
    let ex = exhaustive_mdl_select(dict, &data, &kf, &opt)?;
    let (sparse_support, sparse_score) = match lambda_sweep(dict, &data, &cfg.lambdas, &kf, &opt) {
        Ok(s) => (
            Some(s.selected().support_extracted.clone()),
            s.selected().mdl_rescore.map(|m| m.score),
        ),
        Err(Error::AllPruned) => (None, None),
        Err(e) => return Err(e),
    };
    log::info!("trial {t}: exhaustive {} sparse {:?}", ex.support, sparse_support.as_ref().map(|s| s.to_string()));
    Ok(TrialRecord {
        trial: t,
        data_seed,
        kf_seed: kf.seed,
        opt_seed: opt.seed,
        exhaustive_recovers: &ex.support == truth,
        sparse_recovers: sparse_support.as_ref() == Some(truth),
        sparse_matches_exhaustive: sparse_support.as_ref() == Some(&ex.support),
        exhaustive_support: ex.support,
        exhaustive_score: ex.score,
        exhaustive_mean_rho: ex.mean_rho,
        sparse_support,
        sparse_score,
    })
}

/// Runs the recovery benchmark: per trial, draw GP data from the generating
/// support, select exhaustively and by λ sweep, and compare.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.trials == 0 {
        return Err(Error::Input("trials must be positive".into()));
    }
    let wall = SystemTime::now();
    let start = Instant::now();
    let dict = benchmark_dictionary();
    let truth = benchmark_support();
    // Trials run in parallel; each trial's inner loops stay on the same policy.
    let trials = cfg.kf.exec.try_map(cfg.trials, |t| run_trial(cfg, &dict, &truth, t))?;
    let rate = |f: fn(&TrialRecord) -> bool| trials.iter().filter(|r| f(r)).count() as f64 / trials.len() as f64;
    let mut counts: Vec<(SupportSet, usize)> = Vec::new();
    for r in &trials {
        match counts.iter_mut().find(|(s, _)| *s == r.exhaustive_support) {
            Some(c) => c.1 += 1,
            None => counts.push((r.exhaustive_support.clone(), 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: "bench".into(),
        config: cfg.clone(),
        true_support: truth,
        dictionary: dict,
        exhaustive_recovery_rate: rate(|r| r.exhaustive_recovers),
        sparse_recovery_rate: rate(|r| r.sparse_recovers),
        sparse_match_rate: rate(|r| r.sparse_matches_exhaustive),
        exhaustive_support_counts: counts,
        trials,
        timing: Timing::since(start, wall),
    })
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path.as_ref(), &text)
}

/// Drops the top-level `timing` object, leaving the deterministic part.
pub fn without_timing(mut report: serde_json::Value) -> serde_json::Value {
    if let Some(obj) = report.as_object_mut() {
        obj.remove("timing");
    }
    report
}
