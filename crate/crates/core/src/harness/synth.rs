//! Synthetic data: Gaussian-process draws from a known sparse dictionary,
//! and noisy polynomials for the BIC demo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kernels::{add_diag, raw_gram, BaseKernel, KernelDictionary};
use crate::linalg::Cholesky;
use crate::mdl::SupportSet;

/// The fixed six-kernel benchmark dictionary: gaussian σ=0.2, gaussian σ=1,
/// laplace σ=0.5, linear, polynomial d=2, locally-periodic (1, 0.5, 0.3),
/// all with unit weight.
pub fn benchmark_dictionary() -> KernelDictionary {
    KernelDictionary::new(
        vec![
            BaseKernel::gaussian(0.2).expect("valid"),
            BaseKernel::gaussian(1.0).expect("valid"),
            BaseKernel::laplace(0.5).expect("valid"),
            BaseKernel::linear(),
            BaseKernel::polynomial(2).expect("valid"),
            BaseKernel::locally_periodic(1.0, 0.5, 0.3).expect("valid"),
        ],
        vec![1.0; 6],
    )
    .expect("valid")
}

/// Generating support of the benchmark: {gaussian σ=0.2, linear}.
pub fn benchmark_support() -> SupportSet {
    SupportSet::new(vec![0, 3]).expect("valid")
}

/// Draws `X` uniformly from `[0,1]^d` and `y ~ N(0, K_S(X,X) + noise_sd²·I)`
/// where `K_S` is `true_dict` restricted to `support`.
pub fn gen_gp_dataset(
    true_dict: &KernelDictionary,
    support: &SupportSet,
    n: usize,
    d: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    support.check(true_dict.len())?;
    if n == 0 || d == 0 {
        return Err(Error::Input("need at least one point of dimension at least one".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    let y = draw_targets(true_dict, support, &x, noise_sd, &mut rng)?;
    Dataset::new(x, y, Provenance::SyntheticGp, Some(seed))
}

/// GP draw at caller-supplied inputs, with the same covariance as
/// [`gen_gp_dataset`].
pub fn gen_gp_targets(
    true_dict: &KernelDictionary,
    support: &SupportSet,
    x: &[Vec<f64>],
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    support.check(true_dict.len())?;
    crate::kernels::common_dim(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_targets(true_dict, support, x, noise_sd, &mut rng)
}

fn draw_targets(
    true_dict: &KernelDictionary,
    support: &SupportSet,
    x: &[Vec<f64>],
    noise_sd: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Input(format!("noise_sd must be nonnegative, got {noise_sd}")));
    }
    let active = true_dict.restrict(support.active())?;
    let refs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let mut cov = raw_gram(&active, &refs, Exec::default());
    add_diag(&mut cov, noise_sd * noise_sd);
    let chol = Cholesky::new(&cov)?;
    let z: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    Ok(chol.mul_lower(&z))
}

/// `n` points `x ~ U[-1,1]` with `y = 1 − 2x + 0.5x² + 3x³ + noise_sd·ε`.
pub fn cubic_dataset(n: usize, noise_sd: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|t| {
            let e: f64 = rng.sample(StandardNormal);
            1.0 - 2.0 * t + 0.5 * t * t + 3.0 * t * t * t + noise_sd * e
        })
        .collect();
    Dataset::new(x.into_iter().map(|t| vec![t]).collect(), y, Provenance::SyntheticFunction, Some(seed))
        .expect("finite synthetic data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gram;

    #[test]
    fn constant_kernel_single_draw_is_reproducible() {
        let d = KernelDictionary::single(BaseKernel::constant(1.0).unwrap(), 1.0);
        let s = SupportSet::full(1);
        let a = gen_gp_dataset(&d, &s, 1, 1, 0.0, 17).unwrap();
        let b = gen_gp_dataset(&d, &s, 1, 1, 0.0, 17).unwrap();
        assert_eq!(a.y(), b.y());
        assert_ne!(a.y(), gen_gp_dataset(&d, &s, 1, 1, 0.0, 18).unwrap().y());
        assert_eq!(a.provenance, Provenance::SyntheticGp);
    }

    #[test]
    fn inactive_kernels_have_no_influence() {
        let mut d = benchmark_dictionary();
        let s = benchmark_support();
        let a = gen_gp_dataset(&d, &s, 30, 1, 0.05, 4).unwrap();
        d.set_theta(&[1.0, 9.0, -3.0, 1.0, 0.1, 42.0]).unwrap();
        let b = gen_gp_dataset(&d, &s, 30, 1, 0.05, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_covariance_matches_gram() {
        let dict = KernelDictionary::new(
            vec![BaseKernel::gaussian(0.5).unwrap(), BaseKernel::linear()],
            vec![1.0, 0.7],
        )
        .unwrap();
        let s = SupportSet::full(2);
        let pts = vec![vec![0.1], vec![0.5], vec![0.9]];
        let g = gram(&dict, &pts, 0.0).unwrap().entries;
        let draws = 2000u64;
        let mut acc = [[0.0f64; 3]; 3];
        let mut sq = [[0.0f64; 3]; 3];
        for seed in 0..draws {
            let y = gen_gp_targets(&dict, &s, &pts, 0.0, seed).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    acc[i][j] += y[i] * y[j];
                    sq[i][j] += (y[i] * y[j]).powi(2);
                }
            }
        }
        let n = draws as f64;
        for i in 0..3 {
            for j in 0..3 {
                let mean = acc[i][j] / n;
                let se = ((sq[i][j] / n - mean * mean) / n).sqrt();
                assert!((mean - g[(i, j)]).abs() <= 3.0 * se, "({i},{j}) {mean} vs {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn generator_rejects_bad_arguments() {
        let d = benchmark_dictionary();
        assert!(gen_gp_dataset(&d, &SupportSet::empty(), 10, 1, 0.1, 0).is_err());
        assert!(gen_gp_dataset(&d, &benchmark_support(), 10, 1, -0.1, 0).is_err());
        assert!(gen_gp_dataset(&d, &SupportSet::new(vec![9]).unwrap(), 10, 1, 0.1, 0).is_err());
    }

    #[test]
    fn cubic_dataset_is_deterministic() {
        assert_eq!(cubic_dataset(50, 0.3, 1), cubic_dataset(50, 0.3, 1));
    }
}
