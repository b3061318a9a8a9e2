//! Small helpers around nalgebra for symmetric positive (semi)definite
//! matrices: factor for sampling, inverse and log-determinant, and
//! symmetry/eigenvalue checks.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a matrix is treated as indefinite.
pub const PSD_TOLERANCE: f64 = 1e-10;

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let scale = 1.0f64.max(m[(i, j)].abs()).max(m[(j, i)].abs());
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Factor B with B Bᵀ = m for a symmetric positive semidefinite matrix.
///
/// Tries Cholesky first; if that fails (semidefinite input), falls back to
/// the eigenvalue square root, clipping eigenvalues in [-tol·λmax, 0) to
/// zero. More negative eigenvalues are a decomposition error.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(m.clone());
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = -PSD_TOLERANCE * lambda_max.max(1.0);
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < floor {
            return Err(Error::decomposition(format!(
                "matrix is not positive semidefinite: eigenvalue {lambda:e} below {floor:e}"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= s;
        }
    }
    Ok(scaled)
}

/// Inverse and log-determinant of a symmetric positive definite matrix.
pub fn spd_inverse_logdet(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = Cholesky::new(m.clone()).ok_or_else(|| {
        Error::decomposition("matrix is not positive definite (Cholesky failed)".to_string())
    })?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((chol.inverse(), logdet))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_reconstructs_spd() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = spd_sqrt(&m).unwrap();
        let back = &b * b.transpose();
        assert_relative_eq!(back, m, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_handles_semidefinite() {
        // rank-1 outer product
        let v = nalgebra::DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        let b = spd_sqrt(&m).unwrap();
        let back = &b * b.transpose();
        assert_relative_eq!(back, m, epsilon = 1e-10);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spd_sqrt(&m).is_err());
    }

    #[test]
    fn inverse_logdet() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        let (inv, logdet) = spd_inverse_logdet(&m).unwrap();
        let id = &m * inv;
        assert_relative_eq!(id, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(logdet, (2.0f64 * 1.5 - 0.09).ln(), epsilon = 1e-12);
    }
}
