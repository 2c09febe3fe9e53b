//! Description-length model selection.
//!
//! Each nonempty support `S ⊆ {0..m}` of the dictionary is scored by
//!
//! ```text
//! L(S) = mean ρ(β*, θ*) + (p/2)·ln N
//! ```
//!
//! with `(β*, θ*)` from a stochastic first-order fit restricted to `S`,
//! `p = |S|` and `N` the full dataset size (natural log throughout). The
//! Fisher-information `O(p)` correction is omitted. [`bic_score`] is the
//! same penalty applied to an ordinary negative log-likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::kernels::{median_pairwise_distance, Family, KernelDictionary};
use crate::kf_loss::{derive_seed, mean_rho, rho_gradient, with_resampling, KfConfig};

const TRAIN_STREAM: u64 = 0x7452_4149_4e00;
const VALIDATION_STREAM: u64 = 0x5641_4c49_4400;

/// Indices of the active kernels, sorted and distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SupportSet {
    active: Vec<usize>,
}

impl SupportSet {
    pub fn new(mut active: Vec<usize>) -> Result<Self> {
        active.sort_unstable();
        if active.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("support indices must be distinct".into()));
        }
        Ok(SupportSet { active })
    }

    pub fn empty() -> Self {
        SupportSet { active: Vec::new() }
    }

    pub fn full(m: usize) -> Self {
        SupportSet {
            active: (0..m).collect(),
        }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Number of active kernels.
    pub fn p(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.active.binary_search(&i).is_ok()
    }

    /// Checks every index against a dictionary of `m` kernels.
    pub fn check(&self, m: usize) -> Result<()> {
        match self.active.last() {
            Some(&i) if i >= m => Err(Error::Input(format!(
                "support index {i} out of range for {m} kernels"
            ))),
            _ => Ok(()),
        }
    }

    /// All nonempty supports of `m` kernels, ordered by size and then
    /// lexicographically. This order realizes the tie-break rule.
    pub fn enumerate(m: usize) -> Vec<SupportSet> {
        let mut out = Vec::with_capacity((1usize << m).saturating_sub(1));
        for p in 1..=m {
            let mut idx: Vec<usize> = (0..p).collect();
            loop {
                out.push(SupportSet { active: idx.clone() });
                // Advance to the next p-combination in lexicographic order.
                let mut i = p;
                while i > 0 && idx[i - 1] == m - p + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                idx[i - 1] += 1;
                for j in i..p {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
        out
    }
}

impl TryFrom<Vec<usize>> for SupportSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        SupportSet::new(v)
    }
}

impl From<SupportSet> for Vec<usize> {
    fn from(s: SupportSet) -> Self {
        s.active
    }
}

impl std::fmt::Display for SupportSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let items: Vec<String> = self.active.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

/// What `p` counts in the penalty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyCount {
    /// Nonzero weights only.
    #[default]
    Kernels,
    /// Nonzero weights plus the continuous hyperparameters of active kernels.
    KernelsAndBeta,
}

impl PenaltyCount {
    pub fn count(self, dict: &KernelDictionary, support: &SupportSet) -> usize {
        match self {
            PenaltyCount::Kernels => support.p(),
            PenaltyCount::KernelsAndBeta => {
                support.p()
                    + support
                        .active()
                        .iter()
                        .map(|&i| dict.kernels()[i].n_log_params())
                        .sum::<usize>()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaInit {
    /// Keep the hyperparameters given in the dictionary.
    FromDictionary,
    /// Set length scales to the median pairwise distance of the inputs.
    #[default]
    MedianHeuristic,
}

/// Inner optimizer settings, shared by exhaustive selection and the sparse fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub iterations: usize,
    pub step: f64,
    /// Step multiplier applied after every iteration.
    pub decay: f64,
    pub seed: u64,
    /// Iterations between validation checkpoints.
    pub eval_every: usize,
    /// Initial weight of every active kernel; `None` keeps the dictionary's θ.
    pub theta_init: Option<f64>,
    pub beta_init: BetaInit,
    pub penalty_count: PenaltyCount,
    /// Largest dictionary accepted by exhaustive search.
    pub max_kernels: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            iterations: 500,
            step: 1e-2,
            decay: 0.999,
            seed: 0,
            eval_every: 50,
            theta_init: Some(1.0),
            beta_init: BetaInit::MedianHeuristic,
            penalty_count: PenaltyCount::Kernels,
            max_kernels: 12,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Input(format!("step must be positive, got {}", self.step)));
        }
        if !(self.decay.is_finite() && self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Input(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.eval_every == 0 {
            return Err(Error::Input("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies the configured θ and β initialization to a dictionary.
    pub fn initialize(&self, dict: &KernelDictionary, data: &Dataset) -> Result<KernelDictionary> {
        let mut out = dict.clone();
        if let Some(t) = self.theta_init {
            out.set_theta(&vec![t; dict.len()])?;
        }
        if self.beta_init == BetaInit::MedianHeuristic {
            let scale = median_pairwise_distance(data.x()).ln();
            for k in out.kernels_mut() {
                let mut lp = k.log_params().to_vec();
                match k.family() {
                    Family::Laplace | Family::Gaussian | Family::Triangular => lp[0] = scale,
                    Family::LocallyPeriodic => lp[1] = scale,
                    _ => continue,
                }
                k.set_log_params(&lp)?;
            }
        }
        Ok(out)
    }
}

/// `(p/2)·ln N`.
pub fn penalty(p: usize, n: usize) -> f64 {
    0.5 * p as f64 * (n as f64).ln()
}

/// BIC form of the description length: `nll + (d/2)·ln n`.
pub fn bic_score(neg_log_likelihood: f64, d: usize, n: usize) -> f64 {
    assert!(n >= 1, "bic_score needs at least one sample");
    neg_log_likelihood + penalty(d, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdlScore {
    pub mean_rho: f64,
    pub penalty: f64,
    pub score: f64,
}

impl MdlScore {
    pub fn new(mean_rho: f64, p: usize, n: usize) -> Self {
        let penalty = penalty(p, n);
        MdlScore {
            mean_rho,
            penalty,
            score: mean_rho + penalty,
        }
    }
}

/// Scores `support` at the dictionary's current parameters, with kernels
/// outside the support switched off.
pub fn mdl_score(
    dict: &KernelDictionary,
    data: &Dataset,
    support: &SupportSet,
    kf: &KfConfig,
    count: PenaltyCount,
) -> Result<MdlScore> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    support.check(dict.len())?;
    let restricted = dict.restrict(support.active())?;
    let r = mean_rho(&restricted, data, kf)?;
    Ok(MdlScore::new(r, count.count(dict, support), data.len()))
}

/// `mean ρ + (p/2)·ln N` with `p` the number of active kernels.
pub fn mdl_objective(dict: &KernelDictionary, data: &Dataset, support: &SupportSet, kf: &KfConfig) -> Result<f64> {
    mdl_score(dict, data, support, kf, PenaltyCount::Kernels).map(|s| s.score)
}

/// Result of the inner continuous fit on one support.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportFit {
    /// Full-length dictionary: optimized parameters on the support, zero
    /// weight elsewhere.
    pub dict: KernelDictionary,
    /// Validation mean ρ of the returned iterate.
    pub mean_rho: f64,
    /// Validation mean ρ at the initialization.
    pub initial_mean_rho: f64,
    pub best_iteration: usize,
}

/// Validation configuration: same batch settings, fresh seed.
pub(crate) fn validation_config(kf: &KfConfig) -> KfConfig {
    kf.with_seed(derive_seed(kf.seed, VALIDATION_STREAM, 0))
}

/// Flattens the trainable parameters of `dict` as `[θ..., logβ...]`.
pub(crate) fn pack(dict: &KernelDictionary) -> Vec<f64> {
    let mut v = dict.theta().to_vec();
    for k in dict.kernels() {
        v.extend_from_slice(k.log_params());
    }
    v
}

pub(crate) fn unpack(dict: &mut KernelDictionary, v: &[f64]) -> Result<()> {
    let m = dict.len();
    dict.set_theta(&v[..m])?;
    let mut off = m;
    for k in dict.kernels_mut() {
        let np = k.n_log_params();
        k.set_log_params(&v[off..off + np])?;
        off += np;
    }
    Ok(())
}

/// One stochastic gradient of ρ at `dict` in packed layout, on the pair for
/// iteration `iteration` of the training stream.
pub(crate) fn training_gradient(
    dict: &KernelDictionary,
    data: &Dataset,
    kf: &KfConfig,
    opt_seed: u64,
    iteration: usize,
) -> Result<(f64, Vec<f64>)> {
    let n = data.len();
    let b = kf.effective_batch(n);
    let stream = derive_seed(opt_seed, TRAIN_STREAM, 0);
    let g = with_resampling(n, b, stream, iteration as u64, |pair| {
        rho_gradient(dict, data, pair, kf.nugget)
    })?;
    let mut flat = g.theta;
    for lb in g.log_beta {
        flat.extend(lb);
    }
    Ok((g.value.rho, flat))
}

pub(crate) fn non_finite(iteration: usize, params: &[f64], what: &str) -> Error {
    Error::NonFinite {
        iteration,
        detail: format!("{what}; iterate = {params:?}"),
    }
}

/// Stochastic gradient descent on `(θ, log β)` of the active kernels.
/// Returns the best checkpoint by validation mean ρ (the initialization is
/// checkpoint zero, so the result is never worse than the start).
pub fn optimize_support(
    dict: &KernelDictionary,
    data: &Dataset,
    support: &SupportSet,
    kf: &KfConfig,
    opt: &OptConfig,
) -> Result<SupportFit> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    support.check(dict.len())?;
    opt.validate()?;
    let init = opt.initialize(dict, data)?;
    let mut active = init.restrict(support.active())?;
    let val = validation_config(kf);

    let initial_mean_rho = mean_rho(&active, data, &val)?;
    let mut best = (initial_mean_rho, pack(&active), 0usize);
    let mut params = best.1.clone();
    let mut step = opt.step;

    for it in 0..opt.iterations {
        match training_gradient(&active, data, kf, opt.seed, it) {
            Ok((r, g)) => {
                if !r.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(it, &params, "loss or gradient"));
                }
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= step * gi;
                }
                if params.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(it, &params, "parameters"));
                }
                unpack(&mut active, &params)?;
            }
            // A near-singular batch Gram skips the step.
            Err(Error::SingularGram { pivot, value }) => {
                log::debug!("iteration {it}: skipped step, singular pivot {pivot} ({value:e})");
            }
            Err(e) => return Err(e),
        }
        step *= opt.decay;

        if (it + 1) % opt.eval_every == 0 || it + 1 == opt.iterations {
            match mean_rho(&active, data, &val) {
                Ok(r) if !r.is_finite() => return Err(non_finite(it, &params, "validation loss")),
                Ok(r) if r < best.0 => best = (r, params.clone(), it + 1),
                Ok(_) => {}
                Err(Error::SingularGram { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }

    unpack(&mut active, &best.1)?;
    let mut full = init;
    let mut theta = vec![0.0; full.len()];
    for (j, &i) in support.active().iter().enumerate() {
        theta[i] = active.theta()[j];
        full.kernels_mut()[i] = active.kernels()[j].clone();
    }
    full.set_theta(&theta)?;
    Ok(SupportFit {
        dict: full,
        mean_rho: best.0,
        initial_mean_rho,
        best_iteration: best.2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub support: SupportSet,
    pub p: usize,
    pub mean_rho: f64,
    pub penalty: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub support: SupportSet,
    /// Optimized weights, zero outside the support.
    pub theta_opt: Vec<f64>,
    /// Hyperparameters in natural units, per kernel.
    pub beta_opt: Vec<Vec<f64>>,
    /// Selected dictionary (families, β, θ) for replay.
    pub dictionary: KernelDictionary,
    pub mean_rho: f64,
    pub penalty: f64,
    pub score: f64,
    pub n_data: usize,
    pub penalty_count: PenaltyCount,
    pub log_base: String,
    pub fisher_term: String,
    pub kf_seed: u64,
    pub opt_seed: u64,
    /// One entry per evaluated support, in enumeration order.
    pub audit: Vec<AuditEntry>,
}

impl SelectionReport {
    /// Index of the audit minimizer under the tie-break rule (smaller p, then
    /// lexicographic support).
    pub fn audit_argmin(audit: &[AuditEntry]) -> Option<usize> {
        (0..audit.len()).min_by(|&a, &b| {
            let (x, y) = (&audit[a], &audit[b]);
            x.score
                .total_cmp(&y.score)
                .then(x.p.cmp(&y.p))
                .then(x.support.cmp(&y.support))
        })
    }
}

/// Optimizes and scores all `2^m − 1` nonempty supports and returns the
/// minimizer.
pub fn exhaustive_mdl_select(
    dict: &KernelDictionary,
    data: &Dataset,
    kf: &KfConfig,
    opt: &OptConfig,
) -> Result<SelectionReport> {
    let m = dict.len();
    if m == 0 {
        return Err(Error::Input("dictionary is empty".into()));
    }
    if m > opt.max_kernels {
        return Err(Error::TooManyKernels {
            m,
            cap: opt.max_kernels,
        });
    }
    let supports = SupportSet::enumerate(m);
    let fits = kf.exec.try_map(supports.len(), |s| {
        let fit = optimize_support(dict, data, &supports[s], kf, opt)?;
        let score = MdlScore::new(fit.mean_rho, opt.penalty_count.count(dict, &supports[s]), data.len());
        Ok::<_, Error>((fit, score))
    })?;

    let audit: Vec<AuditEntry> = supports
        .iter()
        .zip(&fits)
        .map(|(s, (_, sc))| AuditEntry {
            support: s.clone(),
            p: s.p(),
            mean_rho: sc.mean_rho,
            penalty: sc.penalty,
            score: sc.score,
        })
        .collect();
    let best = SelectionReport::audit_argmin(&audit).expect("at least one support");
    let (fit, sc) = &fits[best];
    Ok(SelectionReport {
        support: supports[best].clone(),
        theta_opt: fit.dict.theta().to_vec(),
        beta_opt: fit.dict.kernels().iter().map(|k| k.beta()).collect(),
        dictionary: fit.dict.clone(),
        mean_rho: sc.mean_rho,
        penalty: sc.penalty,
        score: sc.score,
        n_data: data.len(),
        penalty_count: opt.penalty_count,
        log_base: "e".into(),
        fisher_term: "omitted".into(),
        kf_seed: kf.seed,
        opt_seed: opt.seed,
        audit,
    })
}

/// Least-squares polynomial fit of each degree in `0..=max_degree` under a
/// Gaussian noise model, scored with [`bic_score`] using `degree + 1`
/// coefficients. Returns `(best_degree, scores)`.
pub fn select_polynomial_degree(x: &[f64], y: &[f64], max_degree: usize) -> Result<(usize, Vec<f64>)> {
    let n = x.len();
    if n != y.len() || n == 0 {
        return Err(Error::Input("need equally many nonzero inputs and targets".into()));
    }
    if max_degree + 1 >= n {
        return Err(Error::Input(format!("degree {max_degree} needs more than {n} samples")));
    }
    let yv = DVector::from_column_slice(y);
    let mut scores = Vec::with_capacity(max_degree + 1);
    for deg in 0..=max_degree {
        let design = DMatrix::from_fn(n, deg + 1, |i, j| x[i].powi(j as i32));
        let coef = design
            .clone()
            .svd(true, true)
            .solve(&yv, 1e-12)
            .map_err(|e| Error::Conditioning(e.to_string()))?;
        let rss = (&design * coef - &yv).norm_squared();
        let var = (rss / n as f64).max(f64::MIN_POSITIVE);
        let nll = 0.5 * n as f64 * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
        scores.push(bic_score(nll, deg + 1, n));
    }
    let best = (0..scores.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .expect("nonempty");
    Ok((best, scores))
}
