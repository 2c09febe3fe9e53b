//! Optimal-recovery interpolation in the RKHS of a dictionary kernel.
//!
//! The interpolant of data `(X, y)` is `v(x) = Σⱼ cⱼ K(x, xⱼ)` with
//! `(Θ + ηI) c = y`, its squared RKHS norm is `yᵀ(Θ + ηI)⁻¹y`, and the
//! posterior variance `σ²(x) = K(x,x) − K(x,X)(Θ + ηI)⁻¹K(X,x)` bounds the
//! pointwise error `|u(x) − v(x)| ≤ σ(x)‖u‖` for any `u` in the space.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{add_diag, common_dim, gram, raw_gram, KernelDictionary, Nugget};
use crate::linalg::Cholesky;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Negative variances within this fraction of `K(x,x)` are roundoff and
/// clamp to zero; anything more negative is reported.
const VARIANCE_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    support_points: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
    kernel: KernelDictionary,
    nugget: f64,
    rkhs_norm_sq: f64,
}

impl FittedModel {
    pub fn support_points(&self) -> &[Vec<f64>] {
        &self.support_points
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn kernel(&self) -> &KernelDictionary {
        &self.kernel
    }

    /// Absolute diagonal shift used in the fit.
    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    /// Cached `yᵀ(Θ + ηI)⁻¹y`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        self.rkhs_norm_sq
    }

    pub fn input_dim(&self) -> usize {
        self.support_points.first().map_or(0, Vec::len)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self
            .support_points
            .iter()
            .zip(&self.coefficients)
            .map(|(p, c)| c * self.kernel.value(x, p))
            .sum())
    }

    pub fn predict_many(&self, xs: &[Vec<f64>], exec: Exec) -> Result<Vec<f64>> {
        exec.try_map(xs.len(), |i| self.predict(&xs[i]))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::error::write_file(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&crate::error::read_file(path.as_ref())?)
    }
}

/// Serialized form of a [`FittedModel`].
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kernel: KernelDictionary,
    nugget: f64,
    rkhs_norm_sq: f64,
    support_points: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
}

impl From<&FittedModel> for ModelFile {
    fn from(m: &FittedModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kernel: m.kernel.clone(),
            nugget: m.nugget,
            rkhs_norm_sq: m.rkhs_norm_sq,
            support_points: m.support_points.clone(),
            coefficients: m.coefficients.clone(),
        }
    }
}

impl TryFrom<ModelFile> for FittedModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Input(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                f.format_version
            )));
        }
        if f.support_points.len() != f.coefficients.len() {
            return Err(Error::Input(format!(
                "{} support points but {} coefficients",
                f.support_points.len(),
                f.coefficients.len()
            )));
        }
        if f.support_points.is_empty() {
            return Err(Error::Input("model has no support points".into()));
        }
        common_dim(&f.support_points)?;
        if !(f.rkhs_norm_sq >= 0.0) {
            return Err(Error::Input(format!("negative RKHS norm {}", f.rkhs_norm_sq)));
        }
        Ok(FittedModel {
            support_points: f.support_points,
            coefficients: f.coefficients,
            kernel: f.kernel,
            nugget: f.nugget,
            rkhs_norm_sq: f.rkhs_norm_sq,
        })
    }
}

fn check_data(points: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Input("at least one data point is required".into()));
    }
    if points.len() != y.len() {
        return Err(Error::Input(format!(
            "{} points but {} targets",
            points.len(),
            y.len()
        )));
    }
    common_dim(points)?;
    Ok(())
}

/// Fits the representer-theorem interpolant.
pub fn fit(
    dict: &KernelDictionary,
    points: &[Vec<f64>],
    y: &[f64],
    nugget: impl Into<Nugget>,
) -> Result<FittedModel> {
    check_data(points, y)?;
    let g = gram(dict, points, nugget)?;
    let chol = g.cholesky()?;
    let coefficients = chol.solve(y);
    let rkhs_norm_sq = chol.quad_form(y);
    Ok(FittedModel {
        support_points: points.to_vec(),
        coefficients,
        kernel: dict.clone(),
        nugget: g.nugget,
        rkhs_norm_sq,
    })
}

pub fn predict(model: &FittedModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// `yᵀ(Θ + ηI)⁻¹y`, the squared RKHS norm of the interpolant.
pub fn rkhs_norm_sq(
    dict: &KernelDictionary,
    points: &[Vec<f64>],
    y: &[f64],
    nugget: impl Into<Nugget>,
) -> Result<f64> {
    check_data(points, y)?;
    gram(dict, points, nugget)?.cholesky().map(|c| c.quad_form(y))
}

/// A factorized conditioning set, reusable across many variance queries.
#[derive(Debug, Clone)]
pub struct Posterior {
    dict: KernelDictionary,
    points: Vec<Vec<f64>>,
    chol: Option<Cholesky>,
}

impl Posterior {
    pub fn new(dict: &KernelDictionary, points: &[Vec<f64>], nugget: impl Into<Nugget>) -> Result<Self> {
        let chol = if points.is_empty() {
            None
        } else {
            Some(gram(dict, points, nugget)?.cholesky()?)
        };
        Ok(Posterior {
            dict: dict.clone(),
            points: points.to_vec(),
            chol,
        })
    }

    /// Schur complement `K(x,x) − K(x,X)(Θ + ηI)⁻¹K(X,x)`.
    pub fn variance(&self, x: &[f64]) -> Result<f64> {
        let kxx = self.dict.eval(x, x)?;
        let Some(chol) = &self.chol else {
            return Ok(kxx);
        };
        if let Some(p) = self.points.first() {
            if p.len() != x.len() {
                return Err(Error::Dimension {
                    expected: p.len(),
                    got: x.len(),
                });
            }
        }
        let kx: Vec<f64> = self.points.iter().map(|p| self.dict.value(x, p)).collect();
        let raw = kxx - chol.quad_form(&kx);
        if raw >= 0.0 {
            Ok(raw)
        } else if raw >= -VARIANCE_CLAMP * kxx.abs() {
            Ok(0.0)
        } else {
            Err(Error::Conditioning(format!(
                "posterior variance {raw:e} is below the clamp window for K(x,x) = {kxx:e}"
            )))
        }
    }

    /// `σ(x)·norm_bound`.
    pub fn error_bound(&self, x: &[f64], norm_bound: f64) -> Result<f64> {
        if !(norm_bound >= 0.0) {
            return Err(Error::Input(format!("norm bound must be nonnegative, got {norm_bound}")));
        }
        Ok(self.variance(x)?.sqrt() * norm_bound)
    }
}

pub fn posterior_variance(
    dict: &KernelDictionary,
    points: &[Vec<f64>],
    x: &[f64],
    nugget: impl Into<Nugget>,
) -> Result<f64> {
    Posterior::new(dict, points, nugget)?.variance(x)
}

/// Pointwise bound `σ(x)·‖u‖` on `|u(x) − v(x)|` for `u` with RKHS norm at
/// most `norm_bound`.
pub fn error_bound(
    dict: &KernelDictionary,
    points: &[Vec<f64>],
    x: &[f64],
    norm_bound: f64,
    nugget: impl Into<Nugget>,
) -> Result<f64> {
    Posterior::new(dict, points, nugget)?.error_bound(x, norm_bound)
}

/// Squared RKHS distance `‖u − v‖²` between two interpolants of the same
/// kernel and nugget, computed as a quadratic form over the union of their
/// support points (exactly equal points are merged). The nugget is kept on
/// the union diagonal, so with `η > 0` this is the norm of the augmented
/// kernel `K + ηδ` both models were fitted in.
pub fn rkhs_distance_sq(u: &FittedModel, v: &FittedModel) -> Result<f64> {
    if u.kernel != v.kernel {
        return Err(Error::Input("models use different kernels".into()));
    }
    if u.nugget != v.nugget {
        return Err(Error::Input("models use different nuggets".into()));
    }
    if u.input_dim() != v.input_dim() {
        return Err(Error::Dimension {
            expected: u.input_dim(),
            got: v.input_dim(),
        });
    }
    let mut points: Vec<&[f64]> = Vec::new();
    let mut coef: Vec<f64> = Vec::new();
    let signed = u
        .support_points
        .iter()
        .zip(u.coefficients.iter().copied())
        .chain(v.support_points.iter().zip(v.coefficients.iter().map(|c| -c)));
    for (p, c) in signed {
        match points.iter().position(|q| bitwise_eq(q, p)) {
            Some(i) => coef[i] += c,
            None => {
                points.push(p);
                coef.push(c);
            }
        }
    }
    let mut g: DMatrix<f64> = raw_gram(&u.kernel, &points, Exec::Sequential);
    add_diag(&mut g, u.nugget);
    let c = nalgebra::DVector::from_column_slice(&coef);
    Ok((c.transpose() * &g * &c)[(0, 0)].max(0.0))
}

fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::BaseKernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gauss(sigma: f64) -> KernelDictionary {
        KernelDictionary::single(BaseKernel::gaussian(sigma).unwrap(), 1.0)
    }

    fn mixed() -> KernelDictionary {
        KernelDictionary::new(
            vec![
                BaseKernel::gaussian(0.3).unwrap(),
                BaseKernel::laplace(0.5).unwrap(),
                BaseKernel::linear(),
            ],
            vec![1.0, 0.7, 0.4],
        )
        .unwrap()
    }

    fn random_points(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn one_point_fit() {
        let x = vec![vec![0.2, 0.9]];
        let m = fit(&gauss(1.0), &x, &[2.0], 0.0).unwrap();
        assert_eq!(m.coefficients(), &[2.0]);
        assert_eq!(m.predict(&x[0]).unwrap(), 2.0);
    }

    #[test]
    fn zero_targets_give_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_points(&mut rng, 5, 2);
        let m = fit(&mixed(), &x, &[0.0; 5], 0.0).unwrap();
        assert!(m.coefficients().iter().all(|c| *c == 0.0));
        assert_eq!(m.rkhs_norm_sq(), 0.0);
        assert_eq!(m.predict(&[0.4, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn fit_matches_dense_lu_oracle_and_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_points(&mut rng, 6, 2);
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dict = mixed();
        let m = fit(&dict, &x, &y, 0.0).unwrap();

        let n = x.len();
        let theta = DMatrix::from_fn(n, n, |i, j| dict.eval(&x[i], &x[j]).unwrap());
        let oracle = theta
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&y))
            .unwrap();
        let ymax = y.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..n {
            assert!((m.coefficients()[i] - oracle[i]).abs() <= 1e-10 * oracle.amax().max(1.0));
            assert!((m.predict(&x[i]).unwrap() - y[i]).abs() <= 1e-8 * ymax);
        }
    }

    #[test]
    fn singular_gram_names_pivot() {
        let x = vec![vec![0.1], vec![0.5], vec![0.1]];
        match fit(&gauss(1.0), &x, &[1.0, 2.0, 1.0], 0.0) {
            Err(Error::SingularGram { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("expected SingularGram, got {other:?}"),
        }
    }

    #[test]
    fn far_prediction_decays() {
        let x = vec![vec![0.0], vec![0.3], vec![0.7]];
        let m = fit(&gauss(0.2), &x, &[1.0, -1.0, 0.5], 0.0).unwrap();
        // nearest support at distance ≥ 4.3: exp(-(4.3/0.2)²) ≈ 1e-201
        let cmax = m.coefficients().iter().fold(0.0f64, |a, c| a.max(c.abs()));
        assert!(m.predict(&[5.0]).unwrap().abs() <= 1e-6 * cmax);
    }

    #[test]
    fn predict_checks_dimension() {
        let m = fit(&gauss(1.0), &[vec![0.0, 0.0]], &[1.0], 0.0).unwrap();
        assert!(matches!(m.predict(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(rkhs_norm_sq(&gauss(1.0), &[vec![0.0]], &[0.0], 0.0).unwrap(), 0.0);
        let k4 = KernelDictionary::single(BaseKernel::gaussian(1.0).unwrap(), 2.0);
        assert_eq!(rkhs_norm_sq(&k4, &[vec![0.3]], &[2.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn norm_equals_coefficient_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_points(&mut rng, 8, 3);
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dict = mixed();
        let m = fit(&dict, &x, &y, 0.0).unwrap();
        let g = gram(&dict, &x, 0.0).unwrap().entries;
        let c = nalgebra::DVector::from_column_slice(m.coefficients());
        let ctc = (c.transpose() * g * &c)[(0, 0)];
        let n = rkhs_norm_sq(&dict, &x, &y, 0.0).unwrap();
        assert!((n - ctc).abs() <= 1e-9 * n);
    }

    #[test]
    fn variance_examples() {
        let x = vec![vec![0.0], vec![0.5]];
        let d = gauss(0.5);
        assert!(posterior_variance(&d, &x, &[0.5], 0.0).unwrap() <= 1e-9);
        assert_eq!(posterior_variance(&d, &[], &[0.5], 0.0).unwrap(), 1.0);
        let far = posterior_variance(&d, &x, &[10.0], 0.0).unwrap();
        assert!((far - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn error_bound_examples() {
        let x = vec![vec![0.0], vec![0.5]];
        let d = gauss(0.5);
        assert!(error_bound(&d, &x, &[0.5], 3.0, 0.0).unwrap() <= 3.0 * 1e-4);
        assert_eq!(error_bound(&d, &x, &[0.25], 0.0, 0.0).unwrap(), 0.0);
        assert!(error_bound(&d, &x, &[0.25], -1.0, 0.0).is_err());
    }

    #[test]
    fn error_bound_holds_for_rkhs_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dict = KernelDictionary::single(BaseKernel::laplace(0.4).unwrap(), 1.0);
        let z = random_points(&mut rng, 6, 2);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = |x: &[f64]| -> f64 { z.iter().zip(&a).map(|(zi, ai)| ai * dict.eval(x, zi).unwrap()).sum() };
        let kz = gram(&dict, &z, 0.0).unwrap().entries;
        let av = nalgebra::DVector::from_column_slice(&a);
        let norm = (av.transpose() * kz * &av)[(0, 0)].sqrt();
        let x = random_points(&mut rng, 10, 2);
        let y: Vec<f64> = x.iter().map(|p| u(p)).collect();
        let v = fit(&dict, &x, &y, 0.0).unwrap();
        let post = Posterior::new(&dict, &x, 0.0).unwrap();
        for _ in 0..20 {
            let p: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let err = (u(&p) - v.predict(&p).unwrap()).abs();
            assert!(err <= post.error_bound(&p, norm).unwrap() + 1e-12);
        }
    }

    #[test]
    fn serialization_round_trip_preserves_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_points(&mut rng, 7, 2);
        let y: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = fit(&mixed(), &x, &y, Nugget::Relative(1e-8)).unwrap();
        let back = FittedModel::from_json(&m.to_json().unwrap()).unwrap();
        for _ in 0..10 {
            let p: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            assert!((m.predict(&p).unwrap() - back.predict(&p).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_unknown_format_version() {
        let m = fit(&gauss(1.0), &[vec![0.0]], &[1.0], 0.0).unwrap();
        let text = m.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(FittedModel::from_json(&text).is_err());
    }

    #[test]
    fn norm_decomposition_on_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dict = mixed();
        let x = random_points(&mut rng, 12, 2);
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let full = fit(&dict, &x, &y, 0.0).unwrap();
        let sub = fit(&dict, &x[..5], &y[..5], 0.0).unwrap();
        let diff = rkhs_distance_sq(&full, &sub).unwrap();
        let lhs = full.rkhs_norm_sq();
        assert!((lhs - diff - sub.rkhs_norm_sq()).abs() <= 1e-8 * lhs);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn variance_is_bounded_and_monotone(
            seed in any::<u64>(),
            n in 1usize..12,
            sigma in 0.2f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dict = KernelDictionary::new(
                vec![BaseKernel::laplace(sigma).unwrap(), BaseKernel::gaussian(sigma).unwrap()],
                vec![1.0, 0.5],
            ).unwrap();
            let x = random_points(&mut rng, n + 1, 2);
            let p: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let kxx = dict.eval(&p, &p).unwrap();
            let fewer = posterior_variance(&dict, &x[..n], &p, 0.0).unwrap();
            let more = posterior_variance(&dict, &x, &p, 0.0).unwrap();
            prop_assert!(fewer >= 0.0 && fewer <= kxx + 1e-10);
            prop_assert!(more <= fewer + 1e-9);
        }
    }
}
