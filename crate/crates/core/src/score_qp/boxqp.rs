//! Primal active-set solver for box bounds `|h_i| ≤ c_i`, optionally with
//! `1ᵀh = 0`. Each iteration solves the program exactly on the current face,
//! then either steps to the first bound in the way and pins it, or, at the
//! face minimizer, releases the bound with the most negative multiplier.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use super::{inf_norm, mat_vec, max_abs, ActiveConstraint, SolverSettings};
use crate::error::{NitError, Result};
use crate::metric_kernel::ScoreSystem;

const REFINEMENT_STEPS: usize = 3;
const FEAS_SLACK: f64 = 1e-12;

pub(super) struct BoxOutput {
    pub h: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub active: Vec<ActiveConstraint>,
}

struct Problem {
    /// `n² (K + ridge n⁻² I)`.
    p: Mat<f64>,
    q: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    zero_sum: bool,
}

impl Problem {
    fn gradient(&self, h: &[f64]) -> Vec<f64> {
        mat_vec(&self.p, h).iter().zip(&self.q).map(|(a, b)| 2.0 * (a + b)).collect()
    }

    /// Minimizer on the face that fixes `fixed` coordinates at their current
    /// values, with the half multiplier `ν/2` of the zero-sum row.
    fn face_solve(&self, h: &[f64], fixed: &[bool]) -> Result<(Vec<f64>, f64)> {
        let n = h.len();
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        if free.is_empty() {
            return Ok((h.to_vec(), self.pinned_multiplier(h, fixed)));
        }
        let m = free.len();
        let pff = Mat::from_fn(m, m, |a, b| self.p[(free[a], free[b])]);
        let llt = pff
            .llt(Side::Lower)
            .map_err(|e| NitError::Numerical(format!("face system factorization failed: {e:?}")))?;
        let solve = |r: &[f64]| -> Vec<f64> {
            let x = llt.solve(&Mat::from_fn(m, 1, |i, _| r[i]));
            (0..m).map(|i| x[(i, 0)]).collect()
        };
        let mut rhs = vec![0.0; m];
        for (a, &i) in free.iter().enumerate() {
            rhs[a] = -self.q[i] - (0..n).filter(|&j| fixed[j]).map(|j| self.p[(i, j)] * h[j]).sum::<f64>();
        }
        let target = -(0..n).filter(|&j| fixed[j]).map(|j| h[j]).sum::<f64>();
        let w = if self.zero_sum { solve(&vec![1.0; m]) } else { Vec::new() };
        let w_sum: f64 = w.iter().sum();
        // KKT: P_FF x + t 1 = r, 1ᵀx = s.
        let kkt = |r: &[f64], s: f64| -> (Vec<f64>, f64) {
            let u = solve(r);
            if !self.zero_sum {
                return (u, 0.0);
            }
            let t = (u.iter().sum::<f64>() - s) / w_sum;
            (u.iter().zip(&w).map(|(a, b)| a - t * b).collect(), t)
        };
        let (mut x, mut t) = kkt(&rhs, target);
        for _ in 0..REFINEMENT_STEPS {
            let px = mat_vec(&pff, &x);
            let r: Vec<f64> = (0..m).map(|a| rhs[a] - px[a] - t).collect();
            let s = if self.zero_sum { target - x.iter().sum::<f64>() } else { 0.0 };
            let (dx, dt) = kkt(&r, s);
            x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            t += dt;
        }
        let mut out = h.to_vec();
        for (a, &i) in free.iter().enumerate() {
            out[i] = x[a];
        }
        Ok((out, t))
    }

    /// `ν/2` when every coordinate is pinned: the middle of the interval
    /// that gives all multipliers the right sign.
    fn pinned_multiplier(&self, h: &[f64], fixed: &[bool]) -> f64 {
        if !self.zero_sum {
            return 0.0;
        }
        let g = self.gradient(h);
        let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..h.len() {
            if !fixed[i] || self.lo[i] == self.hi[i] {
                continue;
            }
            if h[i] == self.hi[i] {
                upper = upper.min(-0.5 * g[i]);
            } else {
                lower = lower.max(-0.5 * g[i]);
            }
        }
        match (lower.is_finite(), upper.is_finite()) {
            (true, true) => 0.5 * (lower + upper),
            (true, false) => lower,
            (false, true) => upper,
            (false, false) => 0.0,
        }
    }

    /// Signed multiplier of a pinned coordinate; negative means the bound
    /// should be released.
    fn bound_multiplier(&self, i: usize, h: &[f64], g: &[f64], half_nu: f64) -> f64 {
        let slope = g[i] + 2.0 * half_nu;
        if self.lo[i] == self.hi[i] {
            f64::INFINITY
        } else if h[i] == self.hi[i] {
            -slope
        } else {
            slope
        }
    }

    /// Relative KKT residual: stationarity with the multipliers implied by
    /// the pinned set, and bound and zero-sum feasibility.
    fn residual(&self, h: &[f64], fixed: &[bool], half_nu: f64) -> f64 {
        let g = self.gradient(h);
        let nu = 2.0 * half_nu;
        let stat = (0..h.len())
            .map(|i| {
                let r = g[i] + nu;
                if fixed[i] && self.bound_multiplier(i, h, &g, half_nu) >= 0.0 {
                    0.0
                } else {
                    r.abs()
                }
            })
            .fold(0.0, f64::max);
        let scale = 2.0 * inf_norm(&self.p) * max_abs(h) + 2.0 * max_abs(&self.q) + nu.abs();
        let stat = if scale > 0.0 { stat / scale } else { 0.0 };
        let bound_scale = 1.0 + max_abs(&self.hi);
        let bounds = (0..h.len())
            .map(|i| (h[i] - self.hi[i]).max(self.lo[i] - h[i]).max(0.0))
            .fold(0.0, f64::max)
            / bound_scale;
        let sum = if self.zero_sum {
            let l1: f64 = h.iter().map(|x| x.abs()).sum();
            if l1 > 0.0 {
                h.iter().sum::<f64>().abs() / l1
            } else {
                0.0
            }
        } else {
            0.0
        };
        stat.max(bounds).max(sum)
    }

    fn violation_at(&self, i: usize, v: f64) -> f64 {
        (v - self.hi[i]).max(self.lo[i] - v)
    }

    fn violation(&self, h: &[f64]) -> f64 {
        (0..h.len()).map(|i| (h[i] - self.hi[i]).max(self.lo[i] - h[i])).fold(0.0, f64::max)
    }

    fn clamp(&self, h: &mut [f64]) {
        for i in 0..h.len() {
            h[i] = h[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

pub(super) fn solve(sys: &ScoreSystem, zero_sum: bool, bounds: &[f64], settings: &SolverSettings) -> Result<BoxOutput> {
    let n = sys.n();
    let n2 = n as f64 * n as f64;
    let a = super::dense::ridged(sys, settings.ridge);
    let problem = Problem {
        p: Mat::from_fn(n, n, |i, j| n2 * a[(i, j)]),
        q: sys.b.iter().map(|b| n2 * b).collect(),
        lo: bounds.iter().map(|c| -c).collect(),
        hi: bounds.to_vec(),
        zero_sum,
    };
    let tol = settings.tol;
    let slack = FEAS_SLACK * (1.0 + max_abs(bounds));
    let mut h = vec![0.0; n];
    let mut fixed: Vec<bool> = (0..n).map(|i| problem.lo[i] == problem.hi[i]).collect();
    let mut iterations = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let (target, half_nu) = problem.face_solve(&h, &fixed)?;
        let d: Vec<f64> = target.iter().zip(&h).map(|(t, x)| t - x).collect();
        let (mut step, mut block) = (1.0, None);
        for i in 0..n {
            if fixed[i] || d[i] == 0.0 || problem.violation_at(i, target[i]) <= slack {
                continue;
            }
            let room = if d[i] > 0.0 { problem.hi[i] - h[i] } else { problem.lo[i] - h[i] };
            let s = (room / d[i]).max(0.0);
            if s < step {
                step = s;
                block = Some(i);
            }
        }
        if let Some(b) = block {
            for i in 0..n {
                if !fixed[i] {
                    h[i] += step * d[i];
                }
            }
            h[b] = if d[b] > 0.0 { problem.hi[b] } else { problem.lo[b] };
            fixed[b] = true;
            problem.clamp(&mut h);
            continue;
        }
        h = target;
        problem.clamp(&mut h);
        let g = problem.gradient(&h);
        let scale = 2.0 * inf_norm(&problem.p) * max_abs(&h) + 2.0 * max_abs(&problem.q) + 2.0 * half_nu.abs();
        let release = (0..n)
            .filter(|&i| fixed[i])
            .map(|i| (i, problem.bound_multiplier(i, &h, &g, half_nu)))
            .filter(|&(_, m)| m < -0.5 * tol * scale)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = release {
            fixed[i] = false;
            continue;
        }
        let residual = problem.residual(&h, &fixed, half_nu);
        if residual > tol {
            return Err(NitError::NotConverged { iterations, primal_residual: 0.0, dual_residual: residual, best: h });
        }
        let active = (0..n)
            .filter(|&i| fixed[i])
            .map(|i| {
                let upper = if problem.lo[i] == problem.hi[i] { g[i] + 2.0 * half_nu <= 0.0 } else { h[i] == problem.hi[i] };
                if upper {
                    ActiveConstraint::Upper(i)
                } else {
                    ActiveConstraint::Lower(i)
                }
            })
            .collect();
        return Ok(BoxOutput { h, residual, iterations, active });
    }
    let residual = problem.residual(&h, &fixed, problem.face_solve(&h, &fixed).map_or(0.0, |r| r.1));
    Err(NitError::NotConverged { iterations, primal_residual: problem.violation(&h).max(0.0), dual_residual: residual, best: h })
}
