//! Thin helpers over `faer` for the small dense matrices used by the metric
//! and the mixture models. Matrices are passed around as row-major `Vec<f64>`.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};

pub(crate) fn to_mat(a: &[f64], m: usize) -> Mat<f64> {
    Mat::from_fn(m, m, |i, j| a[i * m + j])
}

pub(crate) fn from_mat(a: &Mat<f64>) -> Vec<f64> {
    let m = a.nrows();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = a[(i, j)];
        }
    }
    out
}

/// Lower Cholesky factor (row-major), or `None` when `a` is not positive definite.
pub(crate) fn cholesky(a: &[f64], m: usize) -> Option<Vec<f64>> {
    if m == 0 {
        return Some(Vec::new());
    }
    let llt = to_mat(a, m).llt(Side::Lower).ok()?;
    let l = llt.L();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            out[i * m + j] = l[(i, j)];
        }
    }
    Some(out)
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub(crate) fn spd_inverse(a: &[f64], m: usize) -> Option<Vec<f64>> {
    if m == 0 {
        return Some(Vec::new());
    }
    let llt = to_mat(a, m).llt(Side::Lower).ok()?;
    let inv = llt.inverse();
    let mut out = from_mat(&inv);
    for i in 0..m {
        for j in 0..i {
            let s = 0.5 * (out[i * m + j] + out[j * m + i]);
            out[i * m + j] = s;
            out[j * m + i] = s;
        }
    }
    Some(out)
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub(crate) fn spd_solve(a: &[f64], m: usize, b: &[f64]) -> Option<Vec<f64>> {
    if m == 0 {
        return Some(Vec::new());
    }
    let llt = to_mat(a, m).llt(Side::Lower).ok()?;
    let rhs = Mat::from_fn(m, 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Some((0..m).map(|i| x[(i, 0)]).collect())
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
#[cfg(test)]
pub(crate) fn symmetric_eigenvalues(a: &[f64], m: usize) -> Option<Vec<f64>> {
    to_mat(a, m).self_adjoint_eigenvalues(Side::Lower).ok()
}

/// Log-determinant from a lower Cholesky factor.
pub(crate) fn log_det_from_cholesky(l: &[f64], m: usize) -> f64 {
    (0..m).map(|i| 2.0 * l[i * m + i].ln()).sum()
}
