//! Small dense linear-algebra helpers shared by the fitter and resamplers.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Lower-triangular Cholesky factor with positive diagonal, or `None` when
/// the matrix is not (numerically) positive definite.
pub fn chol_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m.clone()).map(|c| c.l())
}

pub fn cholesky(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m)
}

/// Symmetric positive-semidefinite square root via eigendecomposition.
/// Eigenvalues below zero (within roundoff) are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, ev) in eig.eigenvalues.iter().enumerate() {
        let root = ev.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(root);
    }
    &scaled * eig.eigenvectors.transpose()
}

/// Symmetric inverse square root C^(-1/2) via eigendecomposition.
/// Fails when an eigenvalue is nonpositive relative to the largest.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if max_ev <= 0.0 {
        return None;
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, ev) in eig.eigenvalues.iter().enumerate() {
        if *ev <= 1e-12 * max_ev {
            return None;
        }
        scaled.column_mut(j).scale_mut(1.0 / ev.sqrt());
    }
    Some(&scaled * eig.eigenvectors.transpose())
}

/// Column rank of a rectangular matrix from its singular values.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max_sv = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max_sv == 0.0 {
        return 0;
    }
    let tol = max_sv * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|s| **s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let s = psd_sqrt(&m);
        assert_relative_eq!(&s * &s, m, epsilon = 1e-12);
    }

    #[test]
    fn psd_sqrt_of_zero_is_zero() {
        let m = DMatrix::zeros(3, 3);
        assert_eq!(psd_sqrt(&m), DMatrix::zeros(3, 3));
    }

    #[test]
    fn inv_sqrt_whitens() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = sym_inv_sqrt(&m).unwrap();
        assert_relative_eq!(&w * &m * &w, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(sym_inv_sqrt(&m).is_none());
    }

    #[test]
    fn rank_detects_collinearity() {
        let full = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        assert_eq!(rank(&full), 2);
        let deficient = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(rank(&deficient), 1);
    }
}
