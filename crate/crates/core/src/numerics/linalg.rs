use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
///
/// Only the lower triangle of `m` is read. Fails with the (0-based) index of
/// the first leading minor that is not positive.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension {
            name: "cholesky input (square)",
            expected: n,
            got: m.ncols(),
        });
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite(j));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Cholesky with a single roundoff-level retry: on failure the diagonal is
/// shifted by `1e-10 * trace / dim` and the factorization attempted once more.
pub fn cholesky_regularized(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match cholesky(m) {
        Ok(l) => Ok(l),
        Err(Error::NotPositiveDefinite(_)) => {
            let n = m.nrows().max(1);
            let shift = 1e-10 * m.trace().abs() / n as f64;
            let mut shifted = m.clone();
            for i in 0..m.nrows() {
                shifted[(i, i)] += shift;
            }
            cholesky(&shifted)
        }
        Err(e) => Err(e),
    }
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn solve_upper_transpose(l: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = y.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `m x = b` for symmetric positive definite `m`.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let l = cholesky(m)?;
    Ok(solve_upper_transpose(&l, &solve_lower(&l, b)))
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky(m)?;
    let n = m.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::<f64>::zeros(n);
        e[j] = 1.0;
        let col = solve_upper_transpose(&l, &solve_lower(&l, &e));
        inv.set_column(j, &col);
    }
    Ok(symmetrize(&inv))
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// A square factor `F` with `F Fᵀ = m` for a symmetric positive semidefinite
/// matrix. Eigenvalues down to `-1e-12 * max|eig|` are clamped to zero;
/// anything more negative is rejected.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Invalid("covariance must be square".into()));
    }
    if (m - m.transpose()).amax() > 1e-10 * (1.0 + m.amax()) {
        return Err(Error::Invalid("covariance must be symmetric".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax();
    let mut f = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Invalid(format!(
                "covariance is not positive semidefinite (eigenvalue {lambda:e})"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}
