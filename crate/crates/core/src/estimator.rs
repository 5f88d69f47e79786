//! The NIT estimator `δ = y + σ² ĥ` and bandwidth selection by modified
//! cross-validation on the noise-split pair `U = y + αη`, `V = y - η/α`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, NitError, Result};
use crate::metric_kernel::{compute_metric, PairwiseGeometry, DEFAULT_COV_RIDGE};
use crate::score_qp::{solve_score, ConstraintSet, MonotoneOrder, ScoreSolution, SolverSettings};
use crate::seeding;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_REPLICATES: usize = 5;
pub const DEFAULT_GRID_SIZE: usize = 25;
/// Auto grid spans `[lo, hi] · λ₀`, log-spaced.
pub const AUTO_GRID_SPAN: (f64, f64) = (0.25, 64.0);
/// Below this sample size the estimator warns.
pub const SMALL_SAMPLE: usize = 10;

/// `|h_i| ≤ c_i` policy.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BoxBound {
    #[default]
    Off,
    /// `c_i = 10 (1 + ‖x_i‖₂) / σ²` on the pooled record.
    Scaled,
    Uniform(f64),
    PerIndex(Vec<f64>),
}

/// Structural constraints, resolved per fit against the data being fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintOptions {
    pub zero_sum: bool,
    pub box_bound: BoxBound,
    /// `δ` nondecreasing in `y`; only without auxiliaries.
    pub monotone: bool,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        ConstraintOptions { zero_sum: true, box_bound: BoxBound::Off, monotone: false }
    }
}

impl ConstraintOptions {
    /// Feasible set for a fit on `data` with its own `σ`.
    pub fn resolve(&self, data: &Dataset) -> Result<ConstraintSet> {
        let s2 = data.sigma * data.sigma;
        let n = data.n();
        let box_bound = match &self.box_bound {
            BoxBound::Off => None,
            BoxBound::Scaled => Some(
                (0..n)
                    .map(|i| {
                        let norm2 = data.y[i] * data.y[i] + data.aux.row(i).iter().map(|v| v * v).sum::<f64>();
                        10.0 * (1.0 + norm2.sqrt()) / s2
                    })
                    .collect(),
            ),
            BoxBound::Uniform(c) => Some(vec![*c; n]),
            BoxBound::PerIndex(c) => Some(c.clone()),
        };
        let monotone = if self.monotone {
            if data.k() > 0 {
                return invalid("the monotone constraint is only available without auxiliary data");
            }
            Some(MonotoneOrder::from_y(&data.y, s2)?)
        } else {
            None
        };
        Ok(ConstraintSet { zero_sum: self.zero_sum, box_bound, monotone })
    }
}

/// Numerical settings shared by every fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub cov_ridge: f64,
    pub solver: SolverSettings,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { cov_ridge: DEFAULT_COV_RIDGE, solver: SolverSettings::default() }
    }
}

/// Result of a fit at one bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub delta: Vec<f64>,
    pub lambda: f64,
    pub score: ScoreSolution,
}

/// NIT fit of `data` at bandwidth `lambda`.
pub fn fit_nit(data: &Dataset, lambda: f64, cons: &ConstraintOptions, opts: &FitOptions) -> Result<Fit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("bandwidth must be positive, got {lambda}"));
    }
    let x = data.pooled();
    let metric = compute_metric(&x, opts.cov_ridge)?;
    let geometry = PairwiseGeometry::new(&x, &metric)?;
    fit_on_geometry(data, &geometry, lambda, &cons.resolve(data)?, opts)
}

fn fit_on_geometry(
    data: &Dataset,
    geometry: &PairwiseGeometry,
    lambda: f64,
    cons: &ConstraintSet,
    opts: &FitOptions,
) -> Result<Fit> {
    let sys = geometry.score_system(lambda);
    let score = solve_score(&sys, cons, &opts.solver)?;
    let s2 = data.sigma * data.sigma;
    let delta = data.y.iter().zip(&score.h).map(|(y, h)| y + s2 * h).collect();
    Ok(Fit { delta, lambda, score })
}

/// Bandwidth grid of the cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// `DEFAULT_GRID_SIZE` log-spaced points over `AUTO_GRID_SPAN · λ₀`,
    /// `λ₀` the median pairwise distance of the pooled data.
    Auto,
    /// Log-spaced absolute range.
    LogRange { lo: f64, hi: f64, count: usize },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct McvConfig {
    pub alpha: f64,
    pub grid: GridSpec,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for McvConfig {
    fn default() -> Self {
        McvConfig { alpha: DEFAULT_ALPHA, grid: GridSpec::Auto, replicates: DEFAULT_REPLICATES, seed: 0 }
    }
}

impl McvConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.replicates == 0 {
            return invalid("replicates must be at least 1");
        }
        Ok(())
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 || (count > 1 && hi == lo) {
        return invalid(format!("invalid grid {lo}:{hi}:{count}"));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count).map(|t| (a + (b - a) * t as f64 / (count - 1) as f64).exp()).collect())
}

/// Realizes `spec` for `data`.
pub fn resolve_grid(spec: &GridSpec, data: &Dataset, opts: &FitOptions) -> Result<Vec<f64>> {
    let grid = match spec {
        GridSpec::Auto => {
            let x = data.pooled();
            let metric = compute_metric(&x, opts.cov_ridge)?;
            let base = PairwiseGeometry::new(&x, &metric)?.median_distance();
            if !(base > 0.0) {
                return invalid("all records coincide; cannot scale the bandwidth grid");
            }
            log_grid(AUTO_GRID_SPAN.0 * base, AUTO_GRID_SPAN.1 * base, DEFAULT_GRID_SIZE)?
        }
        GridSpec::LogRange { lo, hi, count } => log_grid(*lo, *hi, *count)?,
        GridSpec::Explicit(g) => g.clone(),
    };
    if grid.is_empty() {
        return invalid("bandwidth grid is empty");
    }
    if grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("bandwidth grid must be positive and strictly increasing");
    }
    Ok(grid)
}

/// Noise-split pair `(U, V)` from standard normal draws `z`, `η = σ z`.
pub fn noise_split(y: &[f64], z: &[f64], sigma: f64, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let u = y.iter().zip(z).map(|(y, z)| y + alpha * sigma * z).collect();
    let v = y.iter().zip(z).map(|(y, z)| y - sigma * z / alpha).collect();
    (u, v)
}

/// `n⁻¹ Σ (δ_i(U) - V_i)² - σ² (1 + α⁻²)`.
pub fn validation_loss(fitted_u: &[f64], v: &[f64], sigma: f64, alpha: f64) -> f64 {
    let n = v.len() as f64;
    let sq: f64 = fitted_u.iter().zip(v).map(|(d, v)| (d - v) * (d - v)).sum();
    sq / n - sigma * sigma * (1.0 + 1.0 / (alpha * alpha))
}

/// Averaged validation losses over the grid. Failed grid points carry the
/// first error message instead of a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub points: Vec<(f64, std::result::Result<f64, String>)>,
}

impl LossCurve {
    pub fn successes(&self) -> Vec<(f64, f64)> {
        self.points.iter().filter_map(|(l, r)| r.as_ref().ok().map(|v| (*l, *v))).collect()
    }

    pub fn failures(&self) -> Vec<(f64, String)> {
        self.points.iter().filter_map(|(l, r)| r.as_ref().err().map(|e| (*l, e.clone()))).collect()
    }

    /// Smallest loss, the smallest bandwidth on ties.
    pub fn argmin(&self) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (l, v) in self.successes() {
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((l, v));
            }
        }
        best.map(|b| b.0)
    }
}

/// Evaluates the validation loss for every bandwidth in `grid`.
pub fn mcv_losses(
    data: &Dataset,
    grid: &[f64],
    cfg: &McvConfig,
    cons: &ConstraintOptions,
    opts: &FitOptions,
) -> Result<LossCurve> {
    cfg.validate()?;
    let n = data.n();
    let sigma_u = data.sigma * (1.0 + cfg.alpha * cfg.alpha).sqrt();
    let prepared: Vec<_> = (0..cfg.replicates)
        .map(|r| {
            let mut rng = seeding::stream(cfg.seed, &[r as u64]);
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let (u, v) = noise_split(&data.y, &z, data.sigma, cfg.alpha);
            let split = Dataset::new(u, data.aux.clone(), sigma_u)?;
            let x = split.pooled();
            let metric = compute_metric(&x, opts.cov_ridge)?;
            let geometry = PairwiseGeometry::new(&x, &metric)?;
            let feasible = cons.resolve(&split)?;
            Ok((split, v, geometry, feasible))
        })
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|g| (0..cfg.replicates).map(move |r| (g, r))).collect();
    let losses: Vec<std::result::Result<f64, String>> = tasks
        .par_iter()
        .map(|&(g, r)| {
            let (split, v, geometry, feasible) = &prepared[r];
            fit_on_geometry(split, geometry, grid[g], feasible, opts)
                .map(|fit| validation_loss(&fit.delta, v, data.sigma, cfg.alpha))
                .map_err(|e| e.to_string())
        })
        .collect();
    let points = grid
        .iter()
        .enumerate()
        .map(|(g, &lambda)| {
            let row = &losses[g * cfg.replicates..(g + 1) * cfg.replicates];
            let mut total = 0.0;
            for value in row {
                match value {
                    Ok(v) => total += v,
                    Err(e) => return (lambda, Err(e.clone())),
                }
            }
            (lambda, Ok(total / cfg.replicates as f64))
        })
        .collect();
    Ok(LossCurve { points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub delta: Vec<f64>,
    pub lambda_hat: f64,
    /// `(λ, averaged validation loss)` for every grid point that succeeded.
    pub loss_curve: Vec<(f64, f64)>,
    pub score: ScoreSolution,
    /// Grid points excluded because a fit failed.
    pub failures: Vec<(f64, String)>,
    pub warnings: Vec<String>,
    /// The realized grid.
    pub grid: Vec<f64>,
}

/// Selects the bandwidth by modified cross-validation and refits on `y`.
pub fn mcv_select(
    data: &Dataset,
    cfg: &McvConfig,
    cons: &ConstraintOptions,
    opts: &FitOptions,
) -> Result<EstimateResult> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    if data.n() < SMALL_SAMPLE {
        warnings.push(format!("only {} observations; the estimate is unreliable", data.n()));
    }
    let grid = resolve_grid(&cfg.grid, data, opts)?;
    let curve = mcv_losses(data, &grid, cfg, cons, opts)?;
    let failures = curve.failures();
    let lambda_hat = curve.argmin().ok_or_else(|| NitError::NoUsableBandwidth { failures: failures.clone() })?;
    if lambda_hat == grid[0] || lambda_hat == grid[grid.len() - 1] {
        warnings.push(format!("selected bandwidth {lambda_hat:.6e} lies on the edge of the grid"));
    }
    let fit = fit_nit(data, lambda_hat, cons, opts)?;
    Ok(EstimateResult {
        delta: fit.delta,
        lambda_hat,
        loss_curve: curve.successes(),
        score: fit.score,
        failures,
        warnings,
        grid,
    })
}

/// Default entry point: modified cross-validation followed by the final fit.
pub fn estimate(data: &Dataset, cfg: &McvConfig, cons: &ConstraintOptions, opts: &FitOptions) -> Result<EstimateResult> {
    mcv_select(data, cfg, cons, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AuxData;

    fn toy(n: usize) -> Dataset {
        let y: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.4).collect();
        let s: Vec<f64> = (0..n).map(|i| ((i * 13 % 7) as f64) * 0.3 + y[i] * 0.5).collect();
        Dataset::new(y, AuxData::continuous(n, vec![s]).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.5, 8.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[4] - 8.0).abs() < 1e-12);
        assert!((g[2] - 2.0).abs() < 1e-12);
        assert!(log_grid(1.0, 1.0, 3).is_err());
        assert_eq!(log_grid(2.0, 2.0, 1).unwrap(), vec![2.0]);
    }

    #[test]
    fn pinned_score_returns_observations() {
        let data = toy(12);
        let cons = ConstraintOptions { box_bound: BoxBound::Uniform(0.0), ..Default::default() };
        let fit = fit_nit(&data, 1.0, &cons, &FitOptions::default()).unwrap();
        for (d, y) in fit.delta.iter().zip(&data.y) {
            assert!((d - y).abs() < 1e-8);
        }
    }

    #[test]
    fn delta_is_y_plus_scaled_score() {
        let data = toy(30).with_sigma(0.7).unwrap();
        let fit = fit_nit(&data, 2.0, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
        for i in 0..30 {
            assert!((fit.delta[i] - (data.y[i] + 0.49 * fit.score.h[i])).abs() < 1e-12);
        }
        let mean_gap: f64 = fit.delta.iter().zip(&data.y).map(|(d, y)| d - y).sum::<f64>() / 30.0;
        assert!(mean_gap.abs() < 1e-8);
    }

    #[test]
    fn single_point_grid() {
        let data = toy(20);
        let cfg = McvConfig { grid: GridSpec::Explicit(vec![1.5]), replicates: 2, ..Default::default() };
        let r = mcv_select(&data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
        assert_eq!(r.lambda_hat, 1.5);
        assert_eq!(r.loss_curve.len(), 1);
    }

    #[test]
    fn small_samples_warn() {
        let data = toy(6);
        let cfg = McvConfig { grid: GridSpec::Explicit(vec![1.0, 2.0]), replicates: 1, ..Default::default() };
        let r = mcv_select(&data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("only 6")));
    }

    #[test]
    fn grid_must_increase() {
        let data = toy(10);
        let cfg = McvConfig { grid: GridSpec::Explicit(vec![2.0, 1.0]), ..Default::default() };
        assert!(mcv_select(&data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).is_err());
    }

    #[test]
    fn monotone_needs_univariate_data() {
        let cons = ConstraintOptions { monotone: true, ..Default::default() };
        assert!(cons.resolve(&toy(10)).is_err());
        let uni = Dataset::univariate(toy(10).y, 1.0).unwrap();
        assert!(cons.resolve(&uni).unwrap().monotone.is_some());
    }

    #[test]
    fn argmin_prefers_smaller_bandwidth_on_ties() {
        let curve = LossCurve { points: vec![(1.0, Ok(0.5)), (2.0, Err("x".into())), (3.0, Ok(0.2)), (4.0, Ok(0.2))] };
        assert_eq!(curve.argmin(), Some(3.0));
        assert_eq!(curve.failures().len(), 1);
    }

    #[test]
    fn identical_seed_is_bitwise_reproducible() {
        let data = toy(25);
        let cfg = McvConfig { grid: GridSpec::LogRange { lo: 0.5, hi: 8.0, count: 4 }, replicates: 2, seed: 9, ..Default::default() };
        let a = estimate(&data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
        let b = estimate(&data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
