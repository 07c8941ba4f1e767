//! Small dense linear-algebra helpers shared by the distribution kernels.
//!
//! All solves go through Cholesky. A factorization that fails even after a
//! jitter of `1e-10 * trace / p` on the diagonal is a hard error; silently
//! falling back to pseudo-inverses would mask model misconfiguration.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-10;

/// Checks symmetry within an absolute tolerance scaled by the matrix magnitude.
pub fn check_symmetric(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: format!("{context}: matrix is {}x{}, expected square", m.nrows(), m.ncols()),
        });
    }
    let scale = 1.0 + m.amax();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidParameter(format!(
                    "{context}: matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Cholesky factorization of an SPD matrix, retrying once with jitter.
pub fn spd_cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol);
    }
    let p = m.nrows().max(1) as f64;
    let jitter = 1e-10 * m.trace().abs() / p;
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| Error::NotPositiveDefinite {
        context: context.to_string(),
    })
}

/// log(det(M)) from its Cholesky factor.
pub fn logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Quadratic form (x - mu)' M^{-1} (x - mu) via the Cholesky factor of M.
pub fn mahalanobis_sq(chol: &Cholesky<f64, Dyn>, diff: &DVector<f64>) -> f64 {
    let z = chol.l_dirty().solve_lower_triangular(diff).expect("cholesky factor is nonsingular");
    z.norm_squared()
}

/// Symmetric part (A + A') / 2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Floors the eigenvalues of a symmetric matrix at `floor`, preserving
/// eigenvectors. Used to project near-SPD CM updates back to the cone.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    let mut changed = false;
    for v in vals.iter_mut() {
        if *v < floor {
            *v = floor;
            changed = true;
        }
    }
    if !changed {
        return sym;
    }
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&vals) * q.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = dmatrix![1.0, 2.0; 2.0, 1.0];
        let err = spd_cholesky(&m, "test").unwrap_err();
        assert!(err.to_string().contains("covariance not positive definite"));
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        // Rank-1 PSD matrix: plain Cholesky fails, jitter succeeds.
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!(spd_cholesky(&m, "test").is_ok());
    }

    #[test]
    fn eigenvalue_flooring_preserves_spd() {
        let m = dmatrix![1.0, 0.999; 0.999, 1.0];
        let floored = floor_eigenvalues(&m, 0.01);
        assert!(Cholesky::new(floored).is_some());
    }

    #[test]
    fn mahalanobis_matches_direct_inverse() {
        let m = dmatrix![2.0, 0.3, 0.1; 0.3, 1.5, -0.2; 0.1, -0.2, 1.0];
        let x = DVector::from_vec(vec![0.4, -1.2, 0.7]);
        let chol = spd_cholesky(&m, "test").unwrap();
        let direct = (x.transpose() * m.try_inverse().unwrap() * &x)[(0, 0)];
        approx::assert_relative_eq!(mahalanobis_sq(&chol, &x), direct, epsilon = 1e-12);
    }
}
