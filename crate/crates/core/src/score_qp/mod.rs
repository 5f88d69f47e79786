//! Estimation of the score vector by minimizing the empirical kernelized
//! Stein discrepancy
//!
//! ```text
//!     Ŝ(h) = hᵀ K h + 2 hᵀ ∇K 1 + 1ᵀ ∇²K 1
//! ```
//!
//! over a convex feasible set. Equality-only problems are solved exactly
//! through the dense KKT system, box bounds through an active-set method,
//! and monotonicity through an operator-splitting solver with an active-set
//! polish.

mod admm;
mod boxqp;
mod dense;

use crate::error::{NitError, Result};
use crate::metric_kernel::{MetricKernelConfig, ScoreSystem};

pub const DEFAULT_RIDGE: f64 = 1e-8;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Ordering of the primary observations for the monotonicity constraint
/// `σ² h_(t-1) - σ² h_(t) ≤ y_(t) - y_(t-1)` on the sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneOrder {
    order: Vec<usize>,
    gaps: Vec<f64>,
    sigma2: f64,
}

impl MonotoneOrder {
    pub fn from_y(y: &[f64], sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(NitError::InvalidInput("monotone constraint needs sigma² > 0".into()));
        }
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
        let gaps = order.windows(2).map(|w| y[w[1]] - y[w[0]]).collect();
        Ok(MonotoneOrder { order, gaps, sigma2 })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Feasible set `V_n` of the score program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    /// `1ᵀ h = 0`.
    pub zero_sum: bool,
    /// `|h_i| ≤ c_i`. A zero bound pins the coordinate.
    pub box_bound: Option<Vec<f64>>,
    pub monotone: Option<MonotoneOrder>,
}

impl ConstraintSet {
    pub fn zero_sum() -> Self {
        ConstraintSet { zero_sum: true, ..Default::default() }
    }

    pub fn unconstrained() -> Self {
        ConstraintSet::default()
    }

    pub fn has_inequalities(&self) -> bool {
        self.box_bound.is_some() || self.monotone.is_some()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Some(c) = &self.box_bound {
            if c.len() != n {
                return Err(NitError::InvalidInput(format!(
                    "box bound has {} entries, expected {n}",
                    c.len()
                )));
            }
            if let Some(i) = c.iter().position(|v| v.is_nan() || *v < 0.0) {
                return Err(NitError::Infeasible(format!(
                    "bound |h_{i}| <= {} cannot be satisfied",
                    c[i]
                )));
            }
        }
        if let Some(m) = &self.monotone {
            if m.order.len() != n {
                return Err(NitError::InvalidInput(format!(
                    "monotone order covers {} points, expected {n}",
                    m.order.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Added to the kernel as `ridge · n⁻² · I`.
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { ridge: DEFAULT_RIDGE, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveConstraint {
    Lower(usize),
    Upper(usize),
    /// Monotonicity between the `t`-th and `t+1`-th smallest observation.
    Monotone(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSolution {
    pub h: Vec<f64>,
    /// `Ŝ(h)`, without the ridge.
    pub objective: f64,
    /// Relative KKT residual (stationarity and feasibility).
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active_constraints: Vec<ActiveConstraint>,
}

/// Minimizes `hᵀ (K + ridge·n⁻²·I) h + 2 hᵀ ∇K 1` over `cons`.
pub fn solve_score(
    sys: &ScoreSystem,
    cons: &ConstraintSet,
    settings: &SolverSettings,
) -> Result<ScoreSolution> {
    let n = sys.n();
    if !(settings.ridge >= 0.0) || !(settings.tol > 0.0) {
        return Err(NitError::InvalidInput("ridge must be >= 0 and tol > 0".into()));
    }
    cons.validate(n)?;
    let (h, kkt_residual, iterations, active_constraints) = if let (Some(c), None) = (&cons.box_bound, &cons.monotone) {
        let out = boxqp::solve(sys, cons.zero_sum, c, settings)?;
        (out.h, out.residual, out.iterations, out.active)
    } else if cons.has_inequalities() {
        let out = admm::solve(sys, cons, settings)?;
        (out.h, out.residual, out.iterations, out.active)
    } else {
        let out = dense::solve(sys, cons.zero_sum, settings)?;
        (out.h, out.residual, 0, Vec::new())
    };
    let objective = ksd_objective(&h, sys);
    Ok(ScoreSolution { h, objective, kkt_residual, iterations, active_constraints })
}

/// `Ŝ(h) = hᵀ K h + 2 hᵀ ∇K 1 + 1ᵀ ∇²K 1`.
pub fn ksd_objective(h: &[f64], sys: &ScoreSystem) -> f64 {
    assert_eq!(h.len(), sys.n(), "score vector length must match the kernel");
    let n = sys.n();
    let quad: f64 = (0..n)
        .map(|j| {
            let kh: f64 = sys.k.col_as_slice(j).iter().zip(h).map(|(k, hi)| k * hi).sum();
            kh * h[j]
        })
        .sum();
    let lin: f64 = h.iter().zip(&sys.b).map(|(a, b)| a * b).sum();
    quad + 2.0 * lin + sys.c
}

/// Stein kernel `κ_λ[h](u, v)` for a score function `h`, unscaled.
pub fn kappa_eval<F>(h_fn: F, u: &[f64], v: &[f64], cfg: &MetricKernelConfig) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let (hu, hv) = (h_fn(u), h_fn(v));
    cfg.kernel(u, v) * hu * hv
        + cfg.grad_second(u, v) * hu
        + cfg.grad_first(u, v) * hv
        + cfg.grad_mixed(u, v)
}

/// Largest absolute row sum `‖M‖∞` of a square matrix.
fn inf_norm(k: &faer::Mat<f64>) -> f64 {
    let n = k.nrows();
    let mut rows = vec![0.0; n];
    for j in 0..n {
        for (r, v) in rows.iter_mut().zip(k.col_as_slice(j)) {
            *r += v.abs();
        }
    }
    max_abs(&rows)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn mat_vec(k: &faer::Mat<f64>, x: &[f64]) -> Vec<f64> {
    let n = k.nrows();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = k.col_as_slice(j);
        for (o, kij) in out.iter_mut().zip(col) {
            *o += kij * xj;
        }
    }
    out
}

#[cfg(test)]
mod tests;
