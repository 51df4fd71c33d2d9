//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Symmetric square root of a PSD matrix; negative roundoff eigenvalues are
/// clamped to zero.
pub(crate) fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

pub(crate) fn min_sym_eigenvalue(s: &DMatrix<f64>) -> f64 {
    let sym = (s + s.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub(crate) fn is_symmetric_psd(s: &DMatrix<f64>, tol: f64) -> bool {
    s.is_square() && (s - s.transpose()).amax() <= tol && (s.nrows() == 0 || min_sym_eigenvalue(s) >= -tol)
}

pub(crate) fn row_major(rows: usize, cols: usize, data: Vec<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Column-major `vec(m)` as used by `vec(A X B) = (B^T kron A) vec(X)`.
pub(crate) fn vec_of(m: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn radius_of_rotation_and_diag() {
        assert!((spectral_radius(&dmatrix![0.0, -0.5; 0.5, 0.0]) - 0.5).abs() < 1e-12);
        assert!((spectral_radius(&dmatrix![0.3, 0.0; 0.0, -0.7]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let s = dmatrix![2.0, 0.5; 0.5, 1.0];
        let r = psd_sqrt(&s);
        assert!((&r * &r - s).amax() < 1e-12);
        assert!(psd_sqrt(&DMatrix::zeros(2, 2)).amax() == 0.0);
    }
}
