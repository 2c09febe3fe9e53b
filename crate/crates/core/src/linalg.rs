//! Dense symmetric positive-definite factorization.
//!
//! A hand-rolled Cholesky so that a failed factorization can name the pivot
//! that broke it. There is no pseudo-inverse fallback.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as singular: they are indistinguishable from roundoff.
const PIVOT_FLOOR: f64 = 1e-15;

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: a.ncols(),
            });
        }
        let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let floor = PIVOT_FLOOR * max_diag;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !d.is_finite() || d <= floor {
                return Err(Error::SingularGram { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solves `L z = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length");
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[(i, k)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        z
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = self.forward(b);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// `bᵀ A⁻¹ b`, computed as `‖L⁻¹ b‖²` so it is nonnegative by construction.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        self.forward(b).iter().map(|z| z * z).sum()
    }

    /// Computes `L x` for a vector `x` (used to draw correlated Gaussians).
    pub fn mul_lower(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|k| self.l[(i, k)] * x[k]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_and_solves_small_spd() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let chol = Cholesky::new(&a).unwrap();
        let l = chol.factor();
        let back = l * l.transpose();
        assert!((back - &a).abs().max() < 1e-14);

        let b = [1.0, -2.0, 0.5];
        let x = chol.solve(&b);
        let ax = &a * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-13);
        }
        let qf: f64 = b.iter().zip(&x).map(|(u, v)| u * v).sum();
        assert!((chol.quad_form(&b) - qf).abs() < 1e-13);
    }

    #[test]
    fn names_the_failing_pivot() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        match Cholesky::new(&a) {
            Err(Error::SingularGram { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("expected singular pivot, got {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_diagonal() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(matches!(
            Cholesky::new(&a),
            Err(Error::SingularGram { pivot: 0, .. })
        ));
    }
}
