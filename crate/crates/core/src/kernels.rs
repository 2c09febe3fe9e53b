//! Base kernel catalogue, the weighted dictionary kernel
//! `K(x, y) = Σᵢ θᵢ² kᵢ(x, y; β)`, and Gram assembly.
//!
//! Continuous hyperparameters are stored as logarithms so that gradient steps
//! are unconstrained; accessors report them in natural units. The polynomial
//! degree is discrete and never enters a gradient.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Cholesky;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Constant,
    Linear,
    Polynomial,
    Laplace,
    Gaussian,
    Triangular,
    LocallyPeriodic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Constant => "constant",
            Family::Linear => "linear",
            Family::Polynomial => "polynomial",
            Family::Laplace => "laplace",
            Family::Gaussian => "gaussian",
            Family::Triangular => "triangular",
            Family::LocallyPeriodic => "locally-periodic",
        }
    }

    /// Length of the natural-unit hyperparameter vector.
    pub fn beta_len(self) -> usize {
        match self {
            Family::Linear => 0,
            Family::Constant
            | Family::Polynomial
            | Family::Laplace
            | Family::Gaussian
            | Family::Triangular => 1,
            Family::LocallyPeriodic => 3,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One member of the kernel catalogue together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseKernel {
    family: Family,
    /// Logarithms of the continuous hyperparameters (empty for linear and
    /// polynomial).
    log_beta: Vec<f64>,
    /// Polynomial degree; zero for every other family.
    degree: u32,
}

impl BaseKernel {
    /// Builds a kernel from its family and natural-unit hyperparameters:
    /// constant `[k]`, linear `[]`, polynomial `[d]`, laplace/gaussian/triangular
    /// `[σ]`, locally-periodic `[σ, ℓ, p]`.
    pub fn new(family: Family, beta: &[f64]) -> Result<Self> {
        let bad = |reason: String| Error::Hyperparameter {
            family: family.name(),
            reason,
        };
        if beta.len() != family.beta_len() {
            return Err(bad(format!(
                "expected {} values, got {}",
                family.beta_len(),
                beta.len()
            )));
        }
        if family == Family::Polynomial {
            let d = beta[0];
            if !(d.is_finite() && d >= 1.0 && d.fract() == 0.0 && d <= u32::MAX as f64) {
                return Err(bad(format!("degree must be a positive integer, got {d}")));
            }
            return Ok(BaseKernel {
                family,
                log_beta: Vec::new(),
                degree: d as u32,
            });
        }
        if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(bad(format!("hyperparameters must be positive and finite, got {b}")));
        }
        Ok(BaseKernel {
            family,
            log_beta: beta.iter().map(|b| b.ln()).collect(),
            degree: 0,
        })
    }

    pub fn constant(k: f64) -> Result<Self> {
        Self::new(Family::Constant, &[k])
    }

    pub fn linear() -> Self {
        BaseKernel {
            family: Family::Linear,
            log_beta: Vec::new(),
            degree: 0,
        }
    }

    pub fn polynomial(degree: u32) -> Result<Self> {
        Self::new(Family::Polynomial, &[degree as f64])
    }

    pub fn laplace(sigma: f64) -> Result<Self> {
        Self::new(Family::Laplace, &[sigma])
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(Family::Gaussian, &[sigma])
    }

    pub fn triangular(sigma: f64) -> Result<Self> {
        Self::new(Family::Triangular, &[sigma])
    }

    pub fn locally_periodic(sigma: f64, length: f64, period: f64) -> Result<Self> {
        Self::new(Family::LocallyPeriodic, &[sigma, length, period])
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Hyperparameters in natural units.
    pub fn beta(&self) -> Vec<f64> {
        if self.family == Family::Polynomial {
            vec![self.degree as f64]
        } else {
            self.log_beta.iter().map(|b| b.exp()).collect()
        }
    }

    /// Continuous hyperparameters in log space, the coordinates gradients use.
    pub fn log_params(&self) -> &[f64] {
        &self.log_beta
    }

    pub fn n_log_params(&self) -> usize {
        self.log_beta.len()
    }

    pub fn set_log_params(&mut self, log_beta: &[f64]) -> Result<()> {
        if log_beta.len() != self.log_beta.len() {
            return Err(Error::Dimension {
                expected: self.log_beta.len(),
                got: log_beta.len(),
            });
        }
        if let Some(v) = log_beta.iter().find(|v| !v.is_finite()) {
            return Err(Error::Hyperparameter {
                family: self.family.name(),
                reason: format!("non-finite log hyperparameter {v}"),
            });
        }
        self.log_beta.copy_from_slice(log_beta);
        Ok(())
    }

    /// Kernel value with a dimension check.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        Ok(self.value(x, y))
    }

    /// Kernel value; callers guarantee `x.len() == y.len()`.
    pub(crate) fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = &self.log_beta;
        match self.family {
            Family::Constant => p[0].exp(),
            Family::Linear => dot(x, y),
            Family::Polynomial => (1.0 + dot(x, y)).powi(self.degree as i32),
            Family::Laplace => (-sq_dist(x, y).sqrt() / p[0].exp()).exp(),
            Family::Gaussian => {
                let s = p[0].exp();
                (-sq_dist(x, y) / (s * s)).exp()
            }
            Family::Triangular => {
                let s = p[0].exp();
                (1.0 - sq_dist(x, y) / (s * s)).max(0.0)
            }
            Family::LocallyPeriodic => {
                let (amp, len, per) = (p[0].exp(), p[1].exp(), p[2].exp());
                let r2 = sq_dist(x, y);
                let s = (PI * r2.sqrt() / per).sin();
                amp * amp * (-2.0 * s * s / (len * len)).exp() * (-r2 / (len * len)).exp()
            }
        }
    }

    /// Kernel value plus its derivatives with respect to each log
    /// hyperparameter, written into `grad` (length [`Self::n_log_params`]).
    pub(crate) fn value_and_grad(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let p = &self.log_beta;
        match self.family {
            Family::Constant => {
                let k = p[0].exp();
                grad[0] = k;
                k
            }
            Family::Linear | Family::Polynomial => self.value(x, y),
            Family::Laplace => {
                let t = sq_dist(x, y).sqrt() / p[0].exp();
                let k = (-t).exp();
                grad[0] = t * k;
                k
            }
            Family::Gaussian => {
                let s = p[0].exp();
                let t = sq_dist(x, y) / (s * s);
                let k = (-t).exp();
                grad[0] = 2.0 * t * k;
                k
            }
            Family::Triangular => {
                let s = p[0].exp();
                let t = sq_dist(x, y) / (s * s);
                if t < 1.0 {
                    grad[0] = 2.0 * t;
                    1.0 - t
                } else {
                    grad[0] = 0.0;
                    0.0
                }
            }
            Family::LocallyPeriodic => {
                let (amp, len, per) = (p[0].exp(), p[1].exp(), p[2].exp());
                let r2 = sq_dist(x, y);
                let r = r2.sqrt();
                let phase = PI * r / per;
                let s = phase.sin();
                let l2 = len * len;
                let k = amp * amp * (-2.0 * s * s / l2).exp() * (-r2 / l2).exp();
                grad[0] = 2.0 * k;
                grad[1] = k * (4.0 * s * s + 2.0 * r2) / l2;
                grad[2] = k * 2.0 * phase * (2.0 * phase).sin() / l2;
                k
            }
        }
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

pub fn eval_base(kernel: &BaseKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    kernel.eval(x, y)
}

pub fn eval_dictionary(dict: &KernelDictionary, x: &[f64], y: &[f64]) -> Result<f64> {
    dict.eval(x, y)
}

/// An ordered list of base kernels with mixture weights θ. Each kernel enters
/// with coefficient θᵢ², so the sum stays positive semidefinite whatever the
/// sign of θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DictionarySpec", into = "DictionarySpec")]
pub struct KernelDictionary {
    kernels: Vec<BaseKernel>,
    theta: Vec<f64>,
}

impl KernelDictionary {
    pub fn new(kernels: Vec<BaseKernel>, theta: Vec<f64>) -> Result<Self> {
        if kernels.len() != theta.len() {
            return Err(Error::Input(format!(
                "{} kernels but {} weights",
                kernels.len(),
                theta.len()
            )));
        }
        if let Some(t) = theta.iter().find(|t| !t.is_finite()) {
            return Err(Error::Input(format!("non-finite kernel weight {t}")));
        }
        Ok(KernelDictionary { kernels, theta })
    }

    /// Single-kernel dictionary with weight `theta`.
    pub fn single(kernel: BaseKernel, theta: f64) -> Self {
        KernelDictionary {
            kernels: vec![kernel],
            theta: vec![theta],
        }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[BaseKernel] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [BaseKernel] {
        &mut self.kernels
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension {
                expected: self.theta.len(),
                got: theta.len(),
            });
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    /// Sub-dictionary holding only the kernels at `indices`, in that order.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        let mut kernels = Vec::with_capacity(indices.len());
        let mut theta = Vec::with_capacity(indices.len());
        for &i in indices {
            let k = self.kernels.get(i).ok_or_else(|| {
                Error::Input(format!("kernel index {i} out of range for {} kernels", self.len()))
            })?;
            kernels.push(k.clone());
            theta.push(self.theta[i]);
        }
        Ok(KernelDictionary { kernels, theta })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        Ok(self.value(x, y))
    }

    pub(crate) fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.kernels
            .iter()
            .zip(&self.theta)
            .filter(|(_, t)| **t != 0.0)
            .map(|(k, t)| t * t * k.value(x, y))
            .sum()
    }

    /// Total number of continuous log hyperparameters across kernels.
    pub fn n_log_params(&self) -> usize {
        self.kernels.iter().map(BaseKernel::n_log_params).sum()
    }

    pub fn to_spec(&self) -> DictionarySpec {
        DictionarySpec {
            kernel: self
                .kernels
                .iter()
                .zip(&self.theta)
                .map(|(k, &theta)| KernelSpec {
                    family: k.family(),
                    beta: k.beta(),
                    theta,
                })
                .collect(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: DictionarySpec = toml::from_str(s)?;
        spec.try_into()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(&self.to_spec())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&crate::error::read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::error::write_file(path.as_ref(), &self.to_toml_string()?)
    }
}

/// On-disk form of a dictionary. In TOML:
///
/// ```toml
/// [[kernel]]
/// family = "gaussian"   # constant | linear | polynomial | laplace | gaussian
///                       # | triangular | locally-periodic
/// beta = [0.2]          # natural units; see BaseKernel::new
/// theta = 1.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub kernel: Vec<KernelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: Family,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    1.0
}

impl TryFrom<DictionarySpec> for KernelDictionary {
    type Error = Error;

    fn try_from(spec: DictionarySpec) -> Result<Self> {
        let mut kernels = Vec::with_capacity(spec.kernel.len());
        let mut theta = Vec::with_capacity(spec.kernel.len());
        for k in spec.kernel {
            kernels.push(BaseKernel::new(k.family, &k.beta)?);
            theta.push(k.theta);
        }
        KernelDictionary::new(kernels, theta)
    }
}

impl From<KernelDictionary> for DictionarySpec {
    fn from(dict: KernelDictionary) -> Self {
        dict.to_spec()
    }
}

/// Diagonal regularization policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Nugget {
    /// Added to the diagonal as is.
    Absolute(f64),
    /// Multiplied by the mean diagonal entry of the Gram before adding.
    Relative(f64),
}

impl Default for Nugget {
    fn default() -> Self {
        Nugget::Relative(1e-8)
    }
}

impl From<f64> for Nugget {
    fn from(v: f64) -> Self {
        Nugget::Absolute(v)
    }
}

/// Text form `rel:<v>` or `abs:<v>`; a bare number is absolute.
impl std::str::FromStr for Nugget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, v) = s.split_once(':').unwrap_or(("abs", s));
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("bad nugget value {s:?}")))?;
        match kind.trim() {
            "abs" | "absolute" => Nugget::Absolute(v),
            "rel" | "relative" => Nugget::Relative(v),
            k => return Err(Error::Input(format!("unknown nugget kind {k:?} (expected rel or abs)"))),
        }
        .validate()
    }
}

impl fmt::Display for Nugget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nugget::Absolute(v) => write!(f, "abs:{v:e}"),
            Nugget::Relative(v) => write!(f, "rel:{v:e}"),
        }
    }
}

impl Nugget {
    pub fn validate(self) -> Result<Self> {
        let v = match self {
            Nugget::Absolute(v) | Nugget::Relative(v) => v,
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Input(format!("nugget must be nonnegative, got {v}")));
        }
        Ok(self)
    }

    /// Absolute diagonal shift for a Gram with the given mean diagonal.
    pub fn resolve(self, mean_diag: f64) -> f64 {
        match self {
            Nugget::Absolute(v) => v,
            Nugget::Relative(r) => r * mean_diag,
        }
    }

    /// Derivative of [`Nugget::resolve`] with respect to the mean diagonal.
    pub(crate) fn slope(self) -> f64 {
        match self {
            Nugget::Absolute(_) => 0.0,
            Nugget::Relative(r) => r,
        }
    }
}

/// Symmetric Gram matrix with the nugget already on its diagonal.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub nugget: f64,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(&self.entries)
    }

    /// Largest entrywise asymmetry relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let scale = self.entries.abs().max().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

/// Checks that every point shares the first point's dimension and returns it.
pub fn common_dim(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    for p in points {
        if p.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: p.len(),
            });
        }
    }
    Ok(d)
}

/// Kernel matrix without nugget. Upper triangle rows are computed
/// independently and mirrored, so the result does not depend on `exec`.
pub(crate) fn raw_gram(dict: &KernelDictionary, points: &[&[f64]], exec: Exec) -> DMatrix<f64> {
    let n = points.len();
    let rows = exec.map(n, |i| {
        (i..n)
            .map(|j| dict.value(points[i], points[j]))
            .collect::<Vec<f64>>()
    });
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            m[(i, i + off)] = v;
            m[(i + off, i)] = v;
        }
    }
    m
}

pub(crate) fn mean_diag(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| m[(i, i)]).sum::<f64>() / n as f64
}

pub(crate) fn add_diag(m: &mut DMatrix<f64>, v: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += v;
    }
}

pub fn gram(dict: &KernelDictionary, points: &[Vec<f64>], nugget: impl Into<Nugget>) -> Result<GramMatrix> {
    gram_with(dict, points, nugget, Exec::default())
}

pub fn gram_with(
    dict: &KernelDictionary,
    points: &[Vec<f64>],
    nugget: impl Into<Nugget>,
    exec: Exec,
) -> Result<GramMatrix> {
    let nugget = nugget.into().validate()?;
    if points.is_empty() {
        return Err(Error::Input("Gram of an empty point set".into()));
    }
    common_dim(points)?;
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let mut entries = raw_gram(dict, &refs, exec);
    let shift = nugget.resolve(mean_diag(&entries));
    if shift == 0.0 && has_duplicates(points) {
        log::warn!("duplicate input points with zero nugget: Gram is singular");
    }
    add_diag(&mut entries, shift);
    Ok(GramMatrix {
        entries,
        nugget: shift,
    })
}

fn has_duplicates(points: &[Vec<f64>]) -> bool {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.windows(2).any(|w| w[0] == w[1])
}

/// Median Euclidean distance over all distinct pairs; 1.0 when fewer than
/// two points or when the median is zero.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len().is_multiple_of(2) {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}
