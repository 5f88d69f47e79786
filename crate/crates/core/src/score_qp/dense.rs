//! Exact solve of the equality-constrained program through its KKT system
//!
//! ```text
//!     [2A  1] [h]   [-2b]
//!     [1ᵀ  0] [μ] = [ 0 ]
//! ```
//!
//! by Schur complement on a Cholesky factor of `A`, with iterative
//! refinement. A singular `A` falls back to the minimum-norm minimizer from
//! an eigendecomposition of the projected kernel.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::{inf_norm, mat_vec, max_abs, SolverSettings};
use crate::error::{NitError, Result};
use crate::metric_kernel::ScoreSystem;

const REFINEMENT_STEPS: usize = 3;

pub(super) struct DenseOutput {
    pub h: Vec<f64>,
    pub residual: f64,
}

pub(super) fn ridged(sys: &ScoreSystem, ridge: f64) -> Mat<f64> {
    let n = sys.n();
    let shift = ridge / (n as f64 * n as f64);
    Mat::from_fn(n, n, |i, j| if i == j { sys.k[(i, j)] + shift } else { sys.k[(i, j)] })
}

pub(super) fn solve(sys: &ScoreSystem, zero_sum: bool, settings: &SolverSettings) -> Result<DenseOutput> {
    let a = ridged(sys, settings.ridge);
    let (h, mu) = match a.llt(Side::Lower) {
        Ok(llt) => cholesky_path(&a, &sys.b, zero_sum, |rhs| {
            let m = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
            let x = llt.solve(&m);
            (0..rhs.len()).map(|i| x[(i, 0)]).collect()
        }),
        Err(_) => min_norm_path(&a, &sys.b, zero_sum)?,
    };
    let residual = kkt_residual(&a, &sys.b, &h, mu, zero_sum);
    if !(residual <= settings.tol) {
        return Err(NitError::NotConverged {
            iterations: 0,
            primal_residual: if zero_sum { h.iter().sum::<f64>().abs() } else { 0.0 },
            dual_residual: residual,
            best: h,
        });
    }
    Ok(DenseOutput { h, residual })
}

fn cholesky_path<S>(a: &Mat<f64>, b: &[f64], zero_sum: bool, solve: S) -> (Vec<f64>, f64)
where
    S: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let ones = vec![1.0; n];
    let a_inv_ones = if zero_sum { solve(&ones) } else { Vec::new() };
    let ones_a_ones: f64 = a_inv_ones.iter().sum();

    // Solves the KKT system for right-hand side (r, e), returning (dh, dμ).
    let kkt_solve = |r: &[f64], e: f64| -> (Vec<f64>, f64) {
        let w = solve(r);
        if zero_sum {
            let dmu = (w.iter().sum::<f64>() - 2.0 * e) / ones_a_ones;
            let dh = w.iter().zip(&a_inv_ones).map(|(wi, vi)| 0.5 * (wi - dmu * vi)).collect();
            (dh, dmu)
        } else {
            (w.iter().map(|wi| 0.5 * wi).collect(), 0.0)
        }
    };

    let rhs: Vec<f64> = b.iter().map(|bi| -2.0 * bi).collect();
    let (mut h, mut mu) = kkt_solve(&rhs, 0.0);
    for _ in 0..REFINEMENT_STEPS {
        let ah = mat_vec(a, &h);
        let r: Vec<f64> = (0..n).map(|i| -2.0 * b[i] - 2.0 * ah[i] - mu).collect();
        let e = if zero_sum { -h.iter().sum::<f64>() } else { 0.0 };
        let (dh, dmu) = kkt_solve(&r, e);
        h.iter_mut().zip(&dh).for_each(|(x, d)| *x += d);
        mu += dmu;
    }
    (h, mu)
}

/// Minimum-norm minimizer `h = -(QAQ)⁺ Q b`, `Q` the projector onto the
/// feasible subspace.
fn min_norm_path(a: &Mat<f64>, b: &[f64], zero_sum: bool) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    let project = |v: &mut Vec<f64>| {
        if zero_sum {
            let mean = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= mean);
        }
    };
    let qaq = if zero_sum {
        let row_mean: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).sum::<f64>() / n as f64).collect();
        let total_mean = row_mean.iter().sum::<f64>() / n as f64;
        Mat::from_fn(n, n, |i, j| a[(i, j)] - row_mean[i] - row_mean[j] + total_mean)
    } else {
        a.clone()
    };
    let eig = qaq
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| NitError::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let u = eig.U();
    let s = eig.S().column_vector();
    let top = (0..n).map(|k| s[k].abs()).fold(0.0, f64::max);
    let threshold = top * n as f64 * f64::EPSILON;
    let mut qb = b.to_vec();
    project(&mut qb);
    let mut h = vec![0.0; n];
    for k in 0..n {
        if s[k] <= threshold {
            continue;
        }
        let coef: f64 = (0..n).map(|i| u[(i, k)] * qb[i]).sum::<f64>() / s[k];
        for (i, hi) in h.iter_mut().enumerate() {
            *hi -= coef * u[(i, k)];
        }
    }
    project(&mut h);
    let mu = if zero_sum {
        let ah = mat_vec(a, &h);
        -(0..n).map(|i| 2.0 * ah[i] + 2.0 * b[i]).sum::<f64>() / n as f64
    } else {
        0.0
    };
    Ok((h, mu))
}

/// Normwise relative residual of the KKT conditions.
pub(super) fn kkt_residual(a: &Mat<f64>, b: &[f64], h: &[f64], mu: f64, zero_sum: bool) -> f64 {
    let ah = mat_vec(a, h);
    let stationarity: Vec<f64> = (0..b.len()).map(|i| 2.0 * ah[i] + 2.0 * b[i] + mu).collect();
    let scale = 2.0 * inf_norm(a) * max_abs(h) + 2.0 * max_abs(b) + mu.abs();
    let stat = if scale > 0.0 { max_abs(&stationarity) / scale } else { 0.0 };
    let feas = if zero_sum {
        let l1: f64 = h.iter().map(|x| x.abs()).sum();
        if l1 > 0.0 {
            h.iter().sum::<f64>().abs() / l1
        } else {
            0.0
        }
    } else {
        0.0
    };
    stat.max(feas)
}
