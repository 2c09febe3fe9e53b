//! L1 surrogate for support selection.
//!
//! Minimizes `mean ρ(β, θ) + λ‖θ‖₁` by stochastic proximal gradient: a
//! gradient step on ρ over a fresh batch pair, then soft-thresholding of θ.
//! β takes plain gradient steps in log space. The extracted support is then
//! rescored with the description-length objective, which arbitrates between
//! members of a λ sweep.
//!
//! With every θᵢ = 0 the kernel vanishes and ρ is undefined; such an iterate
//! is assigned ρ = 1 (the sub-batch recovers nothing of the batch).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::kernels::KernelDictionary;
use crate::kf_loss::{mean_rho, KfConfig};
use crate::mdl::{
    mdl_score, non_finite, pack, training_gradient, unpack, validation_config, MdlScore, OptConfig, SupportSet,
};

/// Support extraction keeps `|θᵢ| > SUPPORT_THRESHOLD · max|θ|`.
pub const SUPPORT_THRESHOLD: f64 = 1e-3;

pub const DEFAULT_LAMBDAS: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// `sign(vᵢ)·max(|vᵢ| − t, 0)`, the proximal map of `t‖·‖₁`.
pub fn soft_threshold(v: &[f64], t: f64) -> Vec<f64> {
    assert!(t >= 0.0, "threshold must be nonnegative");
    v.iter().map(|x| x.signum() * (x.abs() - t).max(0.0)).collect()
}

/// One proximal-gradient update of a packed `[θ..., logβ...]` vector whose
/// first `m` entries are weights.
pub(crate) fn prox_gradient_step(params: &mut [f64], grad: &[f64], m: usize, step: f64, lambda: f64) {
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= step * g;
    }
    let shrunk = soft_threshold(&params[..m], step * lambda);
    params[..m].copy_from_slice(&shrunk);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub iteration: usize,
    pub theta: Vec<f64>,
    /// Training-batch ρ plus the L1 penalty at the iterate before the step.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFitResult {
    pub lambda: f64,
    pub theta_path: Vec<PathPoint>,
    pub theta_final: Vec<f64>,
    pub beta_final: Vec<Vec<f64>>,
    pub dictionary: KernelDictionary,
    /// Validation `mean ρ + λ‖θ‖₁` of the returned iterate.
    pub objective: f64,
    pub initial_objective: f64,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub support_extracted: SupportSet,
    /// True when every weight was thresholded to zero.
    pub all_pruned: bool,
    /// Description-length score of the extracted support; absent when empty.
    pub mdl_rescore: Option<MdlScore>,
}

impl SparseFitResult {
    /// Writes the iterate path as whitespace-separated columns:
    /// `iteration theta_0 … theta_{m-1} objective`.
    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let m = self.theta_final.len();
        let cols: Vec<String> = (0..m).map(|i| format!("theta_{i}")).collect();
        writeln!(f, "iteration\t{}\tobjective", cols.join("\t"))?;
        for p in &self.theta_path {
            let th: Vec<String> = p.theta.iter().map(f64::to_string).collect();
            writeln!(f, "{}\t{}\t{}", p.iteration, th.join("\t"), p.objective)?;
        }
        f.flush()?;
        Ok(())
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|t| t.abs()).sum()
}

fn extract_support(theta: &[f64]) -> SupportSet {
    let max = theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    if max == 0.0 {
        return SupportSet::empty();
    }
    let active = (0..theta.len())
        .filter(|&i| theta[i].abs() > SUPPORT_THRESHOLD * max)
        .collect();
    SupportSet::new(active).expect("distinct indices")
}

/// Validation objective, with ρ = 1 for the all-zero kernel.
fn surrogate_objective(dict: &KernelDictionary, data: &Dataset, val: &KfConfig, lambda: f64) -> Result<f64> {
    let r = if dict.theta().iter().all(|t| *t == 0.0) {
        1.0
    } else {
        mean_rho(dict, data, val)?
    };
    Ok(r + lambda * l1(dict.theta()))
}

pub fn sparse_fit(
    dict: &KernelDictionary,
    data: &Dataset,
    lambda: f64,
    kf: &KfConfig,
    opt: &OptConfig,
) -> Result<SparseFitResult> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Input(format!("lambda must be nonnegative, got {lambda}")));
    }
    if dict.is_empty() {
        return Err(Error::Input("dictionary is empty".into()));
    }
    opt.validate()?;
    let m = dict.len();
    let mut current = opt.initialize(dict, data)?;
    let val = validation_config(kf);

    let initial_objective = surrogate_objective(&current, data, &val, lambda)?;
    let mut params = pack(&current);
    let mut best = (initial_objective, params.clone(), 0usize);
    let mut path = Vec::with_capacity(opt.iterations);
    let mut step = opt.step;
    let mut iterations_run = 0;

    for it in 0..opt.iterations {
        if params[..m].iter().all(|t| *t == 0.0) {
            break;
        }
        iterations_run = it + 1;
        match training_gradient(&current, data, kf, opt.seed, it) {
            Ok((r, g)) => {
                if !r.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(it, &params, "loss or gradient"));
                }
                path.push(PathPoint {
                    iteration: it,
                    theta: params[..m].to_vec(),
                    objective: r + lambda * l1(&params[..m]),
                });
                prox_gradient_step(&mut params, &g, m, step, lambda);
                if params.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(it, &params, "parameters"));
                }
                unpack(&mut current, &params)?;
            }
            Err(Error::SingularGram { pivot, value }) => {
                log::debug!("iteration {it}: skipped step, singular pivot {pivot} ({value:e})");
            }
            Err(e) => return Err(e),
        }
        step *= opt.decay;

        let pruned = params[..m].iter().all(|t| *t == 0.0);
        if pruned || (it + 1) % opt.eval_every == 0 || it + 1 == opt.iterations {
            match surrogate_objective(&current, data, &val, lambda) {
                Ok(v) if !v.is_finite() => return Err(non_finite(it, &params, "validation objective")),
                Ok(v) if v < best.0 => best = (v, params.clone(), it + 1),
                Ok(_) => {}
                Err(Error::SingularGram { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }

    unpack(&mut current, &best.1)?;
    let theta_final = current.theta().to_vec();
    let support = extract_support(&theta_final);
    let mdl_rescore = if support.is_empty() {
        None
    } else {
        Some(mdl_score(&current, data, &support, kf, opt.penalty_count)?)
    };
    Ok(SparseFitResult {
        lambda,
        theta_path: path,
        beta_final: current.kernels().iter().map(|k| k.beta()).collect(),
        theta_final,
        dictionary: current,
        objective: best.0,
        initial_objective,
        best_iteration: best.2,
        iterations_run,
        all_pruned: support.is_empty(),
        support_extracted: support,
        mdl_rescore,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub results: Vec<SparseFitResult>,
    /// Index into `results` of the fit whose support has the lowest
    /// description-length rescore.
    pub selected: usize,
}

impl LambdaSweep {
    pub fn selected(&self) -> &SparseFitResult {
        &self.results[self.selected]
    }
}

/// Runs [`sparse_fit`] for every λ and keeps the support with the best
/// description-length rescore (ties: fewer kernels, then earlier λ).
pub fn lambda_sweep(
    dict: &KernelDictionary,
    data: &Dataset,
    lambdas: &[f64],
    kf: &KfConfig,
    opt: &OptConfig,
) -> Result<LambdaSweep> {
    if lambdas.is_empty() {
        return Err(Error::Input("lambda list is empty".into()));
    }
    let results = kf
        .exec
        .try_map(lambdas.len(), |i| sparse_fit(dict, data, lambdas[i], kf, opt))?;
    let selected = (0..results.len())
        .filter_map(|i| results[i].mdl_rescore.map(|s| (i, s.score, results[i].support_extracted.p())))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)))
        .map(|(i, _, _)| i)
        .ok_or(Error::AllPruned)?;
    Ok(LambdaSweep { results, selected })
}
