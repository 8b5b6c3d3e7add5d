//! Largest singular value of a dense matrix by power iteration on `A'A`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ApdError, Result};

pub const DEFAULT_SEED: u64 = 0xA11CE;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub kappa: f64,
    pub iterations: usize,
    /// Relative eigen-residual `||A'A v - s v|| / s` of the final iterate.
    pub residual: f64,
}

/// Largest singular value with the default tolerance and iteration budget.
pub fn spectral_norm(matrix: &DMatrix<f64>) -> Result<f64> {
    largest_singular_value(matrix, DEFAULT_TOL, DEFAULT_MAX_ITER).map(|e| e.kappa)
}

pub fn largest_singular_value(
    matrix: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralEstimate> {
    if matrix.is_empty() {
        return Err(ApdError::InvalidParameter("matrix must be nonempty".into()));
    }
    if !(tol > 0.0) {
        return Err(ApdError::InvalidParameter(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if matrix.iter().all(|&v| v == 0.0) {
        return Ok(SpectralEstimate {
            kappa: 0.0,
            iterations: 0,
            residual: 0.0,
        });
    }

    let n = matrix.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    v.normalize_mut();

    let mut av = DVector::zeros(matrix.nrows());
    let mut w = DVector::zeros(n);
    let mut best = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        av.gemv(1.0, matrix, &v, 0.0);
        w.gemv_tr(1.0, matrix, &av, 0.0);
        // Rayleigh quotient of A'A at the unit vector v
        let theta = av.norm_squared();
        if theta == 0.0 {
            // start vector in the null space; restart along the largest column
            let (j, _) = matrix
                .column_iter()
                .map(|c| c.norm())
                .enumerate()
                .fold((0, 0.0), |acc, (j, c)| if c > acc.1 { (j, c) } else { acc });
            v.fill(0.0);
            v[j] = 1.0;
            continue;
        }
        best = theta.sqrt();
        residual = (&w - &v * theta).norm() / theta;
        if residual <= tol {
            return Ok(SpectralEstimate {
                kappa: best,
                iterations: it,
                residual,
            });
        }
        let norm = w.norm();
        v.copy_from(&(&w / norm));
    }
    Err(ApdError::Convergence {
        best,
        iterations: max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let e = largest_singular_value(&DMatrix::identity(3, 3), 1e-10, 100).unwrap();
        assert!((e.kappa - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        assert!((spectral_norm(&d).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_is_zero() {
        assert_eq!(spectral_norm(&DMatrix::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(largest_singular_value(&DMatrix::zeros(0, 0), 1e-3, 10).is_err());
        assert!(largest_singular_value(&DMatrix::identity(2, 2), 0.0, 10).is_err());
    }

    #[test]
    fn budget_exhaustion_reports_best_estimate() {
        // nearly equal top singular values converge slowly
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.999_999, 0.5]));
        match largest_singular_value(&d, 1e-14, 5) {
            Err(ApdError::Convergence {
                best, iterations, ..
            }) => {
                assert_eq!(iterations, 5);
                assert!(best > 0.9 && best <= 1.0 + 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }
}
