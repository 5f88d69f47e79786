//! Operator-splitting solver for the score program with inequality
//! constraints, in the form
//!
//! ```text
//!     minimize  ½ xᵀ P x + qᵀ x   subject to  l ≤ C x ≤ u
//! ```
//!
//! with `P = 2 n² (K + ridge n⁻² I)` and `q = 2 n² ∇K 1` (the `n²` factor only
//! rescales the objective). Each iteration is one solve with a cached
//! Cholesky factor of `P + σI + Cᵀ R C`. After convergence the active set is
//! polished by an exact equality-constrained solve.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::{mat_vec, max_abs, ActiveConstraint, ConstraintSet, SolverSettings};
use crate::error::{NitError, Result};
use crate::metric_kernel::ScoreSystem;

const SIGMA: f64 = 1e-6;
const RHO: f64 = 0.1;
const RHO_EQ_FACTOR: f64 = 1e3;
const RELAX: f64 = 1.6;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 100;
const POLISH_DELTA: f64 = 1e-10;
const POLISH_REFINE: usize = 5;
const POLISH_ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    ZeroSum,
    Box(usize),
    Monotone(usize),
}

#[derive(Debug, Clone)]
struct Row {
    entries: Vec<(usize, f64)>,
    lo: f64,
    hi: f64,
    kind: RowKind,
}

impl Row {
    fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|(j, c)| c * x[*j]).sum()
    }

    fn is_equality(&self) -> bool {
        self.lo == self.hi
    }
}

pub(super) struct AdmmOutput {
    pub h: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub active: Vec<ActiveConstraint>,
}

fn build_rows(n: usize, cons: &ConstraintSet) -> Vec<Row> {
    let mut rows = Vec::new();
    if cons.zero_sum {
        rows.push(Row {
            entries: (0..n).map(|j| (j, 1.0)).collect(),
            lo: 0.0,
            hi: 0.0,
            kind: RowKind::ZeroSum,
        });
    }
    if let Some(c) = &cons.box_bound {
        for (i, ci) in c.iter().enumerate() {
            rows.push(Row { entries: vec![(i, 1.0)], lo: -ci, hi: *ci, kind: RowKind::Box(i) });
        }
    }
    if let Some(m) = &cons.monotone {
        let s2 = m.sigma2();
        for (t, gap) in m.gaps().iter().enumerate() {
            let (prev, next) = (m.order()[t], m.order()[t + 1]);
            rows.push(Row {
                entries: vec![(prev, s2), (next, -s2)],
                lo: f64::NEG_INFINITY,
                hi: *gap,
                kind: RowKind::Monotone(t),
            });
        }
    }
    rows
}

struct Problem {
    p: Mat<f64>,
    q: Vec<f64>,
    rows: Vec<Row>,
}

impl Problem {
    fn c_times(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(x)).collect()
    }

    fn ct_times(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.q.len()];
        for (r, yr) in self.rows.iter().zip(y) {
            for (j, c) in &r.entries {
                out[*j] += c * yr;
            }
        }
        out
    }

    fn factor(&self, rho: &[f64]) -> Result<faer::linalg::solvers::Llt<f64>> {
        let n = self.q.len();
        let mut m = Mat::from_fn(n, n, |i, j| self.p[(i, j)] + if i == j { SIGMA } else { 0.0 });
        for (r, rr) in self.rows.iter().zip(rho) {
            for (a, ca) in &r.entries {
                for (b, cb) in &r.entries {
                    m[(*a, *b)] += rr * ca * cb;
                }
            }
        }
        m.llt(Side::Lower)
            .map_err(|e| NitError::Numerical(format!("ADMM system factorization failed: {e:?}")))
    }

    /// Scaled primal and dual residuals.
    fn residuals(&self, x: &[f64], z: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
        let cx = self.c_times(x);
        let px = mat_vec(&self.p, x);
        let cty = self.ct_times(y);
        let prim = cx.iter().zip(z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dual = (0..x.len()).map(|i| (px[i] + self.q[i] + cty[i]).abs()).fold(0.0, f64::max);
        let prim_scale = max_abs(&cx).max(max_abs(z));
        let dual_scale = max_abs(&px).max(max_abs(&cty)).max(max_abs(&self.q));
        (prim, dual, prim_scale, dual_scale)
    }

    fn relative_residual(&self, x: &[f64], z: &[f64], y: &[f64]) -> f64 {
        let (prim, dual, ps, ds) = self.residuals(x, z, y);
        (prim / (1.0 + ps)).max(dual / (1.0 + ds))
    }
}

pub(super) fn solve(sys: &ScoreSystem, cons: &ConstraintSet, settings: &SolverSettings) -> Result<AdmmOutput> {
    let n = sys.n();
    let n2 = n as f64 * n as f64;
    let a = super::dense::ridged(sys, settings.ridge);
    let problem = Problem {
        p: Mat::from_fn(n, n, |i, j| 2.0 * n2 * a[(i, j)]),
        q: sys.b.iter().map(|b| 2.0 * n2 * b).collect(),
        rows: build_rows(n, cons),
    };
    let m = problem.rows.len();
    let base_rho: Vec<f64> = problem
        .rows
        .iter()
        .map(|r| if r.is_equality() { RHO * RHO_EQ_FACTOR } else { RHO })
        .collect();
    let mut rho_scale = 1.0;
    let mut rho: Vec<f64> = base_rho.clone();
    let mut llt = problem.factor(&rho)?;

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m];
    let mut y = vec![0.0; m];
    let tol = settings.tol;
    let mut iterations = 0;
    let mut converged = false;
    let mut best = (f64::INFINITY, x.clone());

    while iterations < settings.max_iter {
        iterations += 1;
        let mut rhs: Vec<f64> = (0..n).map(|i| SIGMA * x[i] - problem.q[i]).collect();
        let w: Vec<f64> = (0..m).map(|r| rho[r] * z[r] - y[r]).collect();
        for (i, v) in problem.ct_times(&w).into_iter().enumerate() {
            rhs[i] += v;
        }
        let rhs_mat = Mat::from_fn(n, 1, |i, _| rhs[i]);
        let sol = llt.solve(&rhs_mat);
        let x_tilde: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
        let z_tilde = problem.c_times(&x_tilde);
        for i in 0..n {
            x[i] = RELAX * x_tilde[i] + (1.0 - RELAX) * x[i];
        }
        for r in 0..m {
            let z_hat = RELAX * z_tilde[r] + (1.0 - RELAX) * z[r];
            let row = &problem.rows[r];
            let z_new = (z_hat + y[r] / rho[r]).clamp(row.lo, row.hi);
            y[r] += rho[r] * (z_hat - z_new);
            z[r] = z_new;
        }

        if iterations % CHECK_EVERY == 0 || iterations == settings.max_iter {
            let (prim, dual, ps, ds) = problem.residuals(&x, &z, &y);
            let rel = (prim / (1.0 + ps)).max(dual / (1.0 + ds));
            if rel < best.0 {
                best = (rel, x.clone());
            }
            if prim <= tol * (1.0 + ps) && dual <= tol * (1.0 + ds) {
                converged = true;
                break;
            }
            if iterations % ADAPT_EVERY == 0 && prim > 0.0 && dual > 0.0 {
                let ratio = ((prim / ps.max(1e-300)) / (dual / ds.max(1e-300))).sqrt();
                if !(0.2..=5.0).contains(&ratio) {
                    rho_scale = (rho_scale * ratio).clamp(1e-6, 1e6);
                    rho = base_rho.iter().map(|r| r * rho_scale).collect();
                    llt = problem.factor(&rho)?;
                }
            }
        }
    }

    let polished = polish(&problem, &x, &z, &y, tol);
    if let Some((h, active, residual)) = polished {
        if residual <= tol {
            return Ok(AdmmOutput { h, residual, iterations, active });
        }
    }
    if converged {
        let residual = problem.relative_residual(&x, &z, &y);
        let active = active_set(&problem, &z, &y)
            .into_iter()
            .filter_map(|(r, upper)| public_active(problem.rows[r].kind, upper))
            .collect();
        return Ok(AdmmOutput { h: x, residual, iterations, active });
    }
    let (prim, dual, _, _) = problem.residuals(&x, &z, &y);
    Err(NitError::NotConverged {
        iterations,
        primal_residual: prim,
        dual_residual: dual,
        best: best.1,
    })
}

/// Rows judged active at the ADMM iterate, with `true` for the upper bound.
fn active_set(problem: &Problem, z: &[f64], y: &[f64]) -> Vec<(usize, bool)> {
    problem
        .rows
        .iter()
        .enumerate()
        .filter_map(|(r, row)| {
            if row.is_equality() {
                Some((r, true))
            } else if row.hi - z[r] < y[r] {
                Some((r, true))
            } else if z[r] - row.lo < -y[r] {
                Some((r, false))
            } else {
                None
            }
        })
        .collect()
}

fn public_active(kind: RowKind, upper: bool) -> Option<ActiveConstraint> {
    match kind {
        RowKind::ZeroSum => None,
        RowKind::Box(i) if upper => Some(ActiveConstraint::Upper(i)),
        RowKind::Box(i) => Some(ActiveConstraint::Lower(i)),
        RowKind::Monotone(t) => Some(ActiveConstraint::Monotone(t)),
    }
}

/// Solves the program with the guessed active rows as equalities, then
/// corrects the guess (drop rows with wrong-sign multipliers, add violated
/// rows) until it is primal and dual feasible.
fn polish(
    problem: &Problem,
    x: &[f64],
    z: &[f64],
    y: &[f64],
    tol: f64,
) -> Option<(Vec<f64>, Vec<ActiveConstraint>, f64)> {
    let mut active = active_set(problem, z, y);
    let mut seen: Vec<Vec<(usize, bool)>> = Vec::new();
    for _ in 0..POLISH_ROUNDS {
        let (h, y_full) = polish_solve(problem, x.len(), &active)?;
        let cx = problem.c_times(&h);
        let scale = 1.0 + max_abs(&cx);
        let mut next: Vec<(usize, bool)> = active
            .iter()
            .copied()
            .filter(|&(r, upper)| {
                let yr = y_full[r];
                problem.rows[r].is_equality() || !((upper && yr < -tol) || (!upper && yr > tol))
            })
            .collect();
        for (r, row) in problem.rows.iter().enumerate() {
            if active.iter().any(|&(a, _)| a == r) {
                continue;
            }
            if cx[r] > row.hi + tol * scale {
                next.push((r, true));
            } else if cx[r] < row.lo - tol * scale {
                next.push((r, false));
            }
        }
        next.sort_unstable();
        if next == active {
            let z_proj: Vec<f64> = problem.rows.iter().zip(&cx).map(|(row, v)| v.clamp(row.lo, row.hi)).collect();
            let residual = problem.relative_residual(&h, &z_proj, &y_full);
            let public = active
                .into_iter()
                .filter_map(|(r, upper)| public_active(problem.rows[r].kind, upper))
                .collect();
            return Some((h, public, residual));
        }
        if seen.contains(&next) {
            return None;
        }
        seen.push(std::mem::replace(&mut active, next));
    }
    None
}

/// Equality-constrained solve with `active` rows held at their bounds;
/// returns `h` and the multipliers of every row.
fn polish_solve(problem: &Problem, n: usize, active: &[(usize, bool)]) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = active.len();
    let target: Vec<f64> = active
        .iter()
        .map(|&(r, upper)| {
            let row = &problem.rows[r];
            if upper {
                row.hi
            } else {
                row.lo
            }
        })
        .collect();
    let dim = n + k;
    let mut kkt = Mat::<f64>::zeros(dim, dim);
    for j in 0..n {
        for i in 0..n {
            kkt[(i, j)] = problem.p[(i, j)];
        }
    }
    for (a, &(r, _)) in active.iter().enumerate() {
        for (j, c) in &problem.rows[r].entries {
            kkt[(n + a, *j)] = *c;
            kkt[(*j, n + a)] = *c;
        }
    }
    let exact = kkt.clone();
    for i in 0..dim {
        kkt[(i, i)] += if i < n { POLISH_DELTA } else { -POLISH_DELTA };
    }
    let lu = kkt.partial_piv_lu();
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        rhs[i] = -problem.q[i];
    }
    rhs[n..].copy_from_slice(&target);
    let solve = |r: &[f64]| -> Vec<f64> {
        let m = Mat::from_fn(dim, 1, |i, _| r[i]);
        let s = lu.solve(&m);
        (0..dim).map(|i| s[(i, 0)]).collect()
    };
    let mut sol = solve(&rhs);
    for _ in 0..POLISH_REFINE {
        let mut res = rhs.clone();
        for j in 0..dim {
            let sj = sol[j];
            if sj == 0.0 {
                continue;
            }
            for i in 0..dim {
                res[i] -= exact[(i, j)] * sj;
            }
        }
        let d = solve(&res);
        sol.iter_mut().zip(&d).for_each(|(s, di)| *s += di);
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut y_full = vec![0.0; problem.rows.len()];
    for (a, &(r, _)) in active.iter().enumerate() {
        y_full[r] = sol[n + a];
    }
    Some((sol[..n].to_vec(), y_full))
}
