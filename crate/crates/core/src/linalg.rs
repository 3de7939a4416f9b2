//! Hermitian eigendecomposition.
//!
//! nalgebra 0.35's `SymmetricEigen` returns NaN for some sparse inputs (rank-one
//! projectors whose support falls into decoupled blocks), which is exactly the
//! shape of most density operators here. faer's solver is used instead; the
//! rest of the crate keeps nalgebra types.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues in ascending order with matching orthonormal eigenvectors as
/// columns. Only the Hermitian part of `m` is used.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> Result<(DVector<f64>, DMatrix<Complex64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} matrix is not square",
            n,
            m.ncols()
        )));
    }
    let h = Mat::<Complex64>::from_fn(n, n, |r, c| (m[(r, c)] + m[(c, r)].conj()) * 0.5);
    let eig = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Invalid(format!("eigendecomposition failed: {e:?}")))?;
    let (s, u) = (eig.S(), eig.U());
    let values = DVector::from_fn(n, |i, _| s[i].re);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "eigendecomposition produced non-finite values".into(),
        ));
    }
    Ok((values, DMatrix::from_fn(n, n, |r, c| u[(r, c)])))
}

/// Ascending eigenvalues of a real symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{}x{} matrix is not square",
            n,
            m.ncols()
        )));
    }
    let h = Mat::<f64>::from_fn(n, n, |r, c| 0.5 * (m[(r, c)] + m[(c, r)]));
    let values = h
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Invalid(format!("eigendecomposition failed: {e:?}")))?;
    Ok(DVector::from_vec(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn check(m: &DMatrix<Complex64>) {
        let n = m.nrows();
        let (vals, vecs) = hermitian_eigen(m).unwrap();
        assert_eq!(vals.len(), n);
        assert!(vals.as_slice().windows(2).all(|w| w[0] <= w[1]));
        let ortho = vecs.adjoint() * &vecs - DMatrix::identity(n, n);
        assert!(
            ortho.camax() < 1e-10,
            "eigenvectors not orthonormal: {}",
            ortho.camax()
        );
        let d = DMatrix::from_diagonal(&vals.map(|v| c(v, 0.0)));
        let back = &vecs * d * vecs.adjoint();
        assert!((back - m).camax() < 1e-10);
    }

    #[test]
    fn sparse_rank_one_projector() {
        let mut v = DVector::<Complex64>::zeros(25);
        v[2] = c(-0.673340566348652, 0.15768698835600364);
        v[13] = c(0.7223207704423915, -2.7755575615628914e-17);
        let m = &v * v.adjoint();
        check(&m);
        let (vals, _) = hermitian_eigen(&m).unwrap();
        assert!((vals[24] - v.norm_squared()).abs() < 1e-12);
        assert!(vals[0].abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_generic() {
        check(&DMatrix::identity(5, 5));
        let a = DMatrix::from_fn(6, 6, |r, k| {
            c(
                (r * 7 + k * 3) as f64 % 5.0 - 2.0,
                (r + 2 * k) as f64 % 3.0 - 1.0,
            )
        });
        check(&(&a + a.adjoint()));
        let b = DMatrix::from_fn(6, 2, |r, k| c(r as f64 - k as f64, (r * k) as f64 * 0.3));
        check(&(&b * b.adjoint()));
    }

    #[test]
    fn real_symmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let v = symmetric_eigenvalues(&m).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 3.0).abs() < 1e-14);
        assert!(symmetric_eigenvalues(&DMatrix::zeros(2, 3)).is_err());
    }
}
