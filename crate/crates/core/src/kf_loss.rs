//! Kernel Flows relative-error loss.
//!
//! For a batch `b` and a sub-batch `c ⊂ b` holding half of its points,
//!
//! ```text
//! ρ = 1 − y_cᵀ K_c⁻¹ y_c / y_bᵀ K_b⁻¹ y_b  =  ‖v_b − v_c‖² / ‖v_b‖²
//! ```
//!
//! where `v_b`, `v_c` interpolate the batch and sub-batch. The sub-batch
//! system is the principal submatrix of the regularized batch Gram, so the
//! nugget is shared and `0 ≤ ρ ≤ 1` holds exactly.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::harness::Dataset;
use crate::kernels::{add_diag, mean_diag, raw_gram, KernelDictionary, Nugget};
use crate::linalg::Cholesky;

/// Resampling attempts before a degenerate batch becomes an error.
pub const MAX_RESAMPLES: usize = 10;

/// Relative guard on the batch quadratic form.
const DEGENERACY_GUARD: f64 = 1e-12;

/// SplitMix64 finalizer; combines a base seed with stream/index tags into
/// independent per-purpose seeds.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfConfig {
    pub batch_size: usize,
    pub n_batches: usize,
    pub seed: u64,
    pub nugget: Nugget,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for KfConfig {
    fn default() -> Self {
        KfConfig {
            batch_size: 32,
            n_batches: 32,
            seed: 0,
            nugget: Nugget::default(),
            exec: Exec::default(),
        }
    }
}

impl KfConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        KfConfig { seed, ..self.clone() }
    }

    /// Batch size clipped to the dataset size.
    pub fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.min(n)
    }
}

/// Sorted batch indices into the dataset and a sorted sub-batch of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPair {
    batch_indices: Vec<usize>,
    sub_indices: Vec<usize>,
    /// Positions of `sub_indices` inside `batch_indices`.
    #[serde(skip)]
    sub_positions: Vec<usize>,
    pub seed: u64,
}

impl BatchPair {
    /// Builds a pair from explicit index sets; `sub` must be a subset of
    /// `batch` and neither may repeat an index.
    pub fn new(mut batch: Vec<usize>, mut sub: Vec<usize>, seed: u64) -> Result<Self> {
        batch.sort_unstable();
        sub.sort_unstable();
        if batch.windows(2).any(|w| w[0] == w[1]) || sub.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Input("batch indices must be distinct".into()));
        }
        let sub_positions = sub
            .iter()
            .map(|s| {
                batch
                    .binary_search(s)
                    .map_err(|_| Error::Input(format!("sub-batch index {s} is not in the batch")))
            })
            .collect::<Result<Vec<_>>>()?;
        if sub.is_empty() {
            return Err(Error::Input("sub-batch is empty".into()));
        }
        Ok(BatchPair {
            batch_indices: batch,
            sub_indices: sub,
            sub_positions,
            seed,
        })
    }

    pub fn batch_indices(&self) -> &[usize] {
        &self.batch_indices
    }

    pub fn sub_indices(&self) -> &[usize] {
        &self.sub_indices
    }
}

/// Draws `batch_size` of `n` indices without replacement, then
/// `⌊batch_size/2⌋` of those, deterministically from `seed`.
pub fn sample_batch_pair(n: usize, batch_size: usize, seed: u64) -> Result<BatchPair> {
    if batch_size < 2 || batch_size > n {
        return Err(Error::Input(format!(
            "batch size {batch_size} must lie in [2, {n}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = index::sample(&mut rng, n, batch_size).into_vec();
    batch.sort_unstable();
    let mut positions = index::sample(&mut rng, batch_size, batch_size / 2).into_vec();
    positions.sort_unstable();
    let sub = positions.iter().map(|&p| batch[p]).collect();
    Ok(BatchPair {
        batch_indices: batch,
        sub_indices: sub,
        sub_positions: positions,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoValue {
    pub rho: f64,
    /// `y_cᵀ K_c⁻¹ y_c`
    pub numerator_qf: f64,
    /// `y_bᵀ K_b⁻¹ y_b`
    pub denominator_qf: f64,
}

/// Factorized batch and sub-batch systems for one pair.
struct Systems {
    points: Vec<Vec<f64>>,
    alpha_b: Vec<f64>,
    /// Sub-batch solution scattered into batch positions (zeros elsewhere).
    alpha_c: Vec<f64>,
    value: RhoValue,
}

fn solve_systems(dict: &KernelDictionary, data: &Dataset, pair: &BatchPair, nugget: Nugget) -> Result<Systems> {
    let nugget = nugget.validate()?;
    if let Some(&i) = pair.batch_indices.last() {
        if i >= data.len() {
            return Err(Error::Input(format!(
                "batch index {i} out of range for {} points",
                data.len()
            )));
        }
    }
    let refs: Vec<&[f64]> = pair.batch_indices.iter().map(|&i| data.x()[i].as_slice()).collect();
    let yb: Vec<f64> = pair.batch_indices.iter().map(|&i| data.y()[i]).collect();
    let yc: Vec<f64> = pair.sub_indices.iter().map(|&i| data.y()[i]).collect();

    let mut kb = raw_gram(dict, &refs, Exec::Sequential);
    let shift = nugget.resolve(mean_diag(&kb));
    add_diag(&mut kb, shift);
    let pos = &pair.sub_positions;
    let kc = DMatrix::from_fn(pos.len(), pos.len(), |i, j| kb[(pos[i], pos[j])]);

    let chol_b = Cholesky::new(&kb)?;
    let alpha_b = chol_b.solve(&yb);
    let den: f64 = chol_b.quad_form(&yb);
    let yb_sq: f64 = yb.iter().map(|v| v * v).sum();
    if !(den > DEGENERACY_GUARD * yb_sq) {
        return Err(Error::DegenerateBatch { attempts: 1 });
    }
    let chol_c = Cholesky::new(&kc)?;
    let ac = chol_c.solve(&yc);
    let num = chol_c.quad_form(&yc);
    let mut alpha_c = vec![0.0; yb.len()];
    for (&p, a) in pos.iter().zip(ac) {
        alpha_c[p] = a;
    }
    Ok(Systems {
        points: refs.iter().map(|p| p.to_vec()).collect(),
        alpha_b,
        alpha_c,
        value: RhoValue {
            rho: 1.0 - num / den,
            numerator_qf: num,
            denominator_qf: den,
        },
    })
}

pub fn rho(dict: &KernelDictionary, data: &Dataset, pair: &BatchPair, nugget: impl Into<Nugget>) -> Result<RhoValue> {
    solve_systems(dict, data, pair, nugget.into()).map(|s| s.value)
}

/// Gradient of ρ with respect to every θᵢ and every log hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoGradient {
    pub value: RhoValue,
    pub theta: Vec<f64>,
    /// One entry per kernel, each of length `n_log_params()`.
    pub log_beta: Vec<Vec<f64>>,
}

/// Exact gradient via `∂(yᵀK⁻¹y) = −αᵀ(∂K)α`, including the dependence of a
/// relative nugget on the mean diagonal.
pub fn rho_gradient(
    dict: &KernelDictionary,
    data: &Dataset,
    pair: &BatchPair,
    nugget: impl Into<Nugget>,
) -> Result<RhoGradient> {
    let nugget = nugget.into();
    let sys = solve_systems(dict, data, pair, nugget)?;
    let n = sys.points.len();
    let slope = nugget.slope();
    let ab = &sys.alpha_b;
    let ac = &sys.alpha_c;
    let ab_sq: f64 = ab.iter().map(|v| v * v).sum();
    let ac_sq: f64 = ac.iter().map(|v| v * v).sum();
    let RhoValue {
        numerator_qf: num,
        denominator_qf: den,
        ..
    } = sys.value;

    // dρ from the derivative of the unregularized Gram, summarized by
    // αᵀ(∂K)α for both systems and the trace of ∂K.
    let chain = |sb: f64, sc: f64, trace: f64| {
        let dshift = slope * trace / n as f64;
        let d_den = -(sb + dshift * ab_sq);
        let d_num = -(sc + dshift * ac_sq);
        (num * d_den - den * d_num) / (den * den)
    };

    let mut theta = vec![0.0; dict.len()];
    let mut log_beta: Vec<Vec<f64>> = dict.kernels().iter().map(|k| vec![0.0; k.n_log_params()]).collect();
    let mut g = Vec::new();
    for (i, (kernel, &t)) in dict.kernels().iter().zip(dict.theta()).enumerate() {
        if t == 0.0 {
            continue;
        }
        let np = kernel.n_log_params();
        g.resize(np, 0.0);
        // Accumulators: [kernel value, per-parameter derivatives] for the batch
        // form, the sub-batch form, and the diagonal trace.
        let mut sb = vec![0.0; np + 1];
        let mut sc = vec![0.0; np + 1];
        let mut tr = vec![0.0; np + 1];
        for a in 0..n {
            for b in a..n {
                let k = kernel.value_and_grad(&sys.points[a], &sys.points[b], &mut g);
                let w = if a == b { 1.0 } else { 2.0 };
                let wb = w * ab[a] * ab[b];
                let wc = w * ac[a] * ac[b];
                sb[0] += wb * k;
                sc[0] += wc * k;
                for j in 0..np {
                    sb[j + 1] += wb * g[j];
                    sc[j + 1] += wc * g[j];
                }
                if a == b {
                    tr[0] += k;
                    for j in 0..np {
                        tr[j + 1] += g[j];
                    }
                }
            }
        }
        let dt = 2.0 * t;
        theta[i] = chain(dt * sb[0], dt * sc[0], dt * tr[0]);
        let t2 = t * t;
        for j in 0..np {
            log_beta[i][j] = chain(t2 * sb[j + 1], t2 * sc[j + 1], t2 * tr[j + 1]);
        }
    }
    Ok(RhoGradient {
        value: sys.value,
        theta,
        log_beta,
    })
}

/// Runs `f` on the pair for slot `slot` of a sampling stream, resampling on
/// degenerate batches up to [`MAX_RESAMPLES`] times.
pub fn with_resampling<T>(
    n: usize,
    batch_size: usize,
    seed: u64,
    slot: u64,
    mut f: impl FnMut(&BatchPair) -> Result<T>,
) -> Result<T> {
    for attempt in 0..MAX_RESAMPLES {
        let pair = sample_batch_pair(n, batch_size, derive_seed(seed, slot, attempt as u64))?;
        match f(&pair) {
            Err(Error::DegenerateBatch { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::DegenerateBatch {
        attempts: MAX_RESAMPLES,
    })
}

/// ρ on each of `cfg.n_batches` freshly sampled pairs, in pair order.
pub fn rho_samples(dict: &KernelDictionary, data: &Dataset, cfg: &KfConfig) -> Result<Vec<f64>> {
    if cfg.n_batches == 0 {
        return Err(Error::Input("n_batches must be at least 1".into()));
    }
    let n = data.len();
    let b = cfg.effective_batch(n);
    cfg.exec.try_map(cfg.n_batches, |j| {
        with_resampling(n, b, cfg.seed, j as u64, |pair| {
            rho(dict, data, pair, cfg.nugget).map(|r| r.rho)
        })
    })
}

/// Monte-Carlo mean of ρ over `cfg.n_batches` pairs; deterministic per seed.
pub fn mean_rho(dict: &KernelDictionary, data: &Dataset, cfg: &KfConfig) -> Result<f64> {
    let v = rho_samples(dict, data, cfg)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Provenance;
    use crate::kernels::BaseKernel;
    use crate::rkhs::{fit, rkhs_distance_sq};
    use proptest::prelude::*;
    use rand::Rng;

    fn dataset(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let y = x
            .iter()
            .map(|p| (4.0 * p[0]).sin() + 0.3 * p.iter().sum::<f64>() + 0.05 * rng.random::<f64>())
            .collect();
        Dataset::new(x, y, Provenance::SyntheticFunction, Some(seed)).unwrap()
    }

    fn dict() -> KernelDictionary {
        KernelDictionary::new(
            vec![
                BaseKernel::gaussian(0.3).unwrap(),
                BaseKernel::laplace(0.6).unwrap(),
                BaseKernel::linear(),
                BaseKernel::locally_periodic(1.0, 0.7, 0.4).unwrap(),
            ],
            vec![1.0, 0.6, 0.3, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn forced_batch() {
        let p = sample_batch_pair(2, 2, 7).unwrap();
        assert_eq!(p.batch_indices(), &[0, 1]);
        assert_eq!(p.sub_indices().len(), 1);
    }

    #[test]
    fn sampling_is_deterministic_and_well_formed() {
        let a = sample_batch_pair(100, 11, 42).unwrap();
        let b = sample_batch_pair(100, 11, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.batch_indices().len(), 11);
        assert_eq!(a.sub_indices().len(), 5);
        assert!(a.sub_indices().iter().all(|s| a.batch_indices().contains(s)));
        assert_ne!(a, sample_batch_pair(100, 11, 43).unwrap());
    }

    #[test]
    fn batch_size_out_of_range() {
        assert!(sample_batch_pair(10, 1, 0).is_err());
        assert!(sample_batch_pair(10, 11, 0).is_err());
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        // Each index should land in a batch with probability 10/100.
        let mut counts = [0usize; 100];
        let draws = 10_000;
        for s in 0..draws {
            for &i in sample_batch_pair(100, 10, derive_seed(99, 0, s)).unwrap().batch_indices() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.1).abs() <= 0.01, "frequency {f}");
        }
    }

    #[test]
    fn full_sub_batch_gives_zero() {
        let data = dataset(1, 10, 2);
        let pair = BatchPair::new((0..6).collect(), (0..6).collect(), 0).unwrap();
        let r = rho(&dict(), &data, &pair, Nugget::default()).unwrap();
        assert!(r.rho.abs() < 1e-12);
    }

    #[test]
    fn two_point_batch_matches_explicit_inverse() {
        let data = Dataset::new(
            vec![vec![0.1], vec![0.45]],
            vec![1.3, -0.4],
            Provenance::File,
            None,
        )
        .unwrap();
        let d = KernelDictionary::single(BaseKernel::gaussian(0.5).unwrap(), 1.0);
        let pair = BatchPair::new(vec![0, 1], vec![0], 0).unwrap();
        let r = rho(&d, &data, &pair, 0.0).unwrap();
        let k12 = (-(0.35f64 * 0.35) / 0.25).exp();
        let (y1, y2) = (1.3, -0.4);
        let det = 1.0 - k12 * k12;
        let den = (y1 * y1 - 2.0 * k12 * y1 * y2 + y2 * y2) / det;
        let want = 1.0 - (y1 * y1 / 1.0) / den;
        assert!((r.rho - want).abs() <= 1e-14);
        assert!((r.rho - (1.0 - r.numerator_qf / r.denominator_qf)).abs() <= 1e-12);
    }

    #[test]
    fn quadratic_forms_match_norm_ratio() {
        let data = dataset(4, 60, 2);
        let d = dict();
        for s in 0..10 {
            let pair = sample_batch_pair(60, 16, s).unwrap();
            let r = rho(&d, &data, &pair, 0.0).unwrap();
            let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
                (idx.iter().map(|&i| data.x()[i].clone()).collect(), idx.iter().map(|&i| data.y()[i]).collect())
            };
            let (xb, yb) = pick(pair.batch_indices());
            let (xc, yc) = pick(pair.sub_indices());
            let vb = fit(&d, &xb, &yb, 0.0).unwrap();
            let vc = fit(&d, &xc, &yc, 0.0).unwrap();
            let ratio = rkhs_distance_sq(&vb, &vc).unwrap() / vb.rkhs_norm_sq();
            assert!((r.rho - ratio).abs() <= 1e-8 * ratio.abs().max(1e-12), "{} vs {}", r.rho, ratio);
        }
    }

    #[test]
    fn zero_targets_are_degenerate() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0]).collect();
        let data = Dataset::new(x, vec![0.0; 8], Provenance::File, None).unwrap();
        let pair = sample_batch_pair(8, 4, 0).unwrap();
        assert!(matches!(
            rho(&dict(), &data, &pair, Nugget::default()),
            Err(Error::DegenerateBatch { .. })
        ));
        let cfg = KfConfig {
            batch_size: 4,
            n_batches: 3,
            ..KfConfig::default()
        };
        assert!(matches!(
            mean_rho(&dict(), &data, &cfg),
            Err(Error::DegenerateBatch { attempts: MAX_RESAMPLES })
        ));
    }

    #[test]
    fn degenerate_batches_are_resampled() {
        // Only the first two targets are nonzero; most small batches miss them.
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 12.0]).collect();
        let mut y = vec![0.0; 12];
        y[0] = 1.0;
        y[1] = -0.5;
        let data = Dataset::new(x, y, Provenance::File, None).unwrap();
        let cfg = KfConfig {
            batch_size: 6,
            n_batches: 20,
            seed: 3,
            ..KfConfig::default()
        };
        let v = rho_samples(&dict(), &data, &cfg).unwrap();
        assert_eq!(v.len(), 20);
        assert!(v.iter().all(|r| (0.0..=1.0 + 1e-9).contains(r)));
    }

    #[test]
    fn mean_rho_single_batch_and_determinism() {
        let data = dataset(9, 50, 2);
        let cfg = KfConfig {
            batch_size: 12,
            n_batches: 1,
            seed: 5,
            ..KfConfig::default()
        };
        let single = with_resampling(50, 12, 5, 0, |p| rho(&dict(), &data, p, cfg.nugget)).unwrap();
        assert_eq!(mean_rho(&dict(), &data, &cfg).unwrap(), single.rho);
        let cfg = KfConfig { n_batches: 40, ..cfg };
        assert_eq!(mean_rho(&dict(), &data, &cfg).unwrap(), mean_rho(&dict(), &data, &cfg).unwrap());
        let seq = KfConfig {
            exec: Exec::Sequential,
            ..cfg.clone()
        };
        assert_eq!(
            mean_rho(&dict(), &data, &seq).unwrap().to_bits(),
            mean_rho(&dict(), &data, &cfg).unwrap().to_bits()
        );
    }

    #[test]
    fn monte_carlo_means_are_consistent() {
        let data = dataset(12, 120, 2);
        let small = KfConfig {
            batch_size: 16,
            n_batches: 200,
            seed: 1,
            ..KfConfig::default()
        };
        let large = KfConfig {
            n_batches: 2000,
            seed: 2,
            ..small.clone()
        };
        let a = rho_samples(&dict(), &data, &small).unwrap();
        let b = rho_samples(&dict(), &data, &large).unwrap();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var / v.len() as f64)
        };
        let (ma, va) = stats(&a);
        let (mb, vb) = stats(&b);
        assert!((ma - mb).abs() <= 3.0 * (va + vb).sqrt(), "{ma} vs {mb}");
    }

    fn objective(d: &KernelDictionary, data: &Dataset, pair: &BatchPair, nugget: Nugget) -> f64 {
        rho(d, data, pair, nugget).unwrap().rho
    }

    /// Central differences in θ and log β against the analytic gradient.
    fn check_gradient(d: &KernelDictionary, data: &Dataset, pair: &BatchPair, nugget: Nugget) {
        let g = rho_gradient(d, data, pair, nugget).unwrap();
        let h = 1e-5;
        let agree = |analytic: f64, numeric: f64, what: &str| {
            let scale = analytic.abs().max(numeric.abs()).max(1e-7);
            assert!((analytic - numeric).abs() <= 1e-5 * scale + 1e-9, "{what}: {analytic} vs {numeric}");
        };
        for i in 0..d.len() {
            let t = d.theta()[i];
            let step = h * t.abs().max(1e-3);
            let mut plus = d.clone();
            let mut minus = d.clone();
            let mut th = d.theta().to_vec();
            th[i] = t + step;
            plus.set_theta(&th).unwrap();
            th[i] = t - step;
            minus.set_theta(&th).unwrap();
            let fd = (objective(&plus, data, pair, nugget) - objective(&minus, data, pair, nugget)) / (2.0 * step);
            agree(g.theta[i], fd, &format!("theta[{i}]"));
            for j in 0..d.kernels()[i].n_log_params() {
                let lp = d.kernels()[i].log_params().to_vec();
                let step = h * lp[j].abs().max(1.0);
                let mut plus = d.clone();
                let mut minus = d.clone();
                let mut v = lp.clone();
                v[j] = lp[j] + step;
                plus.kernels_mut()[i].set_log_params(&v).unwrap();
                v[j] = lp[j] - step;
                minus.kernels_mut()[i].set_log_params(&v).unwrap();
                let fd = (objective(&plus, data, pair, nugget) - objective(&minus, data, pair, nugget)) / (2.0 * step);
                agree(g.log_beta[i][j], fd, &format!("log_beta[{i}][{j}]"));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = dataset(31, 40, 2);
        let pair = sample_batch_pair(40, 12, 8).unwrap();
        check_gradient(&dict(), &data, &pair, Nugget::Relative(1e-3));
        check_gradient(&dict(), &data, &pair, Nugget::Absolute(1e-3));
    }

    #[test]
    fn zero_weight_has_zero_gradient() {
        let data = dataset(2, 30, 2);
        let pair = sample_batch_pair(30, 10, 1).unwrap();
        let mut d = dict();
        d.set_theta(&[1.0, 0.0, 0.5, 0.2]).unwrap();
        let g = rho_gradient(&d, &data, &pair, Nugget::default()).unwrap();
        assert_eq!(g.theta[1], 0.0);
        assert!(g.log_beta[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_kernel_with_constant_targets_has_flat_theta() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let data = Dataset::new(x, vec![2.0; 10], Provenance::File, None).unwrap();
        let d = KernelDictionary::single(BaseKernel::constant(1.5).unwrap(), 0.8);
        let pair = sample_batch_pair(10, 6, 2).unwrap();
        let g = rho_gradient(&d, &data, &pair, Nugget::Relative(1e-3)).unwrap();
        assert!(g.theta[0].abs() <= 1e-10, "{}", g.theta[0]);
    }

    #[test]
    fn quadratic_forms_are_gaussian_log_density_terms() {
        // −2 × the quadratic part of log N(y; 0, K) is yᵀK⁻¹y; use an
        // independent LU inverse.
        let data = dataset(6, 30, 2);
        let d = dict();
        let pair = sample_batch_pair(30, 10, 4).unwrap();
        let r = rho(&d, &data, &pair, 0.0).unwrap();
        let quad = |idx: &[usize]| {
            let n = idx.len();
            let k = DMatrix::from_fn(n, n, |i, j| d.eval(&data.x()[idx[i]], &data.x()[idx[j]]).unwrap());
            let y = nalgebra::DVector::from_iterator(n, idx.iter().map(|&i| data.y()[i]));
            let inv = k.lu().try_inverse().unwrap();
            let log_quad = -0.5 * (y.transpose() * inv * &y)[(0, 0)];
            -2.0 * log_quad
        };
        let qb = quad(pair.batch_indices());
        let qc = quad(pair.sub_indices());
        assert!((r.denominator_qf - qb).abs() <= 1e-8 * qb);
        assert!((r.numerator_qf - qc).abs() <= 1e-8 * qc);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn rho_is_scale_invariant_and_bounded(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let data = dataset(seed % 1000, 30, 2);
            let pair = sample_batch_pair(30, 10, seed).unwrap();
            let d = dict();
            let mut scaled = d.clone();
            let s = scale.sqrt();
            let th: Vec<f64> = d.theta().iter().map(|t| t * s).collect();
            scaled.set_theta(&th).unwrap();
            let a = rho(&d, &data, &pair, Nugget::default()).unwrap();
            let b = rho(&scaled, &data, &pair, Nugget::default()).unwrap();
            prop_assert!((a.rho - b.rho).abs() <= 1e-10 * a.rho.abs().max(1.0));
            prop_assert!(a.rho >= 0.0 && a.rho <= 1.0 + 1e-9);
            prop_assert!((a.rho - (1.0 - a.numerator_qf / a.denominator_qf)).abs() <= 1e-12);
        }
    }
}
