//! Monte Carlo and quadrature evaluation of Fisher information and Bayes
//! risk under mixture models.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::oracle::{AuxLaw, OracleMixtureModel};
use crate::seeding;

const MC_CHUNK: usize = 10_000;
const QUAD_PIECES: usize = 200;
const QUAD_TOL: f64 = 1e-13;
const QUAD_DEPTH: u32 = 40;

/// Estimated efficiency gain `σ⁴ (I_{Y|S} - I_Y)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherGain {
    pub gain: f64,
    pub std_error: f64,
    /// `E[(∂_y log f(y))²]`.
    pub info_y: f64,
    /// `E[(∂_y log f(y | s))²]`.
    pub info_y_given_s: f64,
}

/// Monte Carlo estimate of the risk reduction from using the auxiliaries.
pub fn fisher_gain_mc(model: &OracleMixtureModel, sigma: f64, n_mc: usize, seed: u64) -> Result<FisherGain> {
    if n_mc < 1000 {
        return invalid(format!("n_mc must be at least 1000, got {n_mc}"));
    }
    let marginal = model.marginal_y();
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let parts: Vec<(f64, f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let size = MC_CHUNK.min(n_mc - c * MC_CHUNK);
            let mut rng = seeding::stream(seed, &[c as u64]);
            let draw = model.sample(sigma, size, &mut rng)?;
            let data = &draw.data;
            let (mut sj, mut sm, mut sd, mut sd2) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..size {
                let gj = model.score(data.y[i], data.aux.row(i)).powi(2);
                let gm = marginal.score(data.y[i], &[]).powi(2);
                let d = gj - gm;
                sj += gj;
                sm += gm;
                sd += d;
                sd2 += d * d;
            }
            Ok((sj, sm, sd, sd2))
        })
        .collect::<Result<_>>()?;
    let (sj, sm, sd, sd2) = parts
        .iter()
        .fold((0.0, 0.0, 0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2, a.3 + p.3));
    let m = n_mc as f64;
    let mean_d = sd / m;
    let var_d = ((sd2 - m * mean_d * mean_d) / (m - 1.0)).max(0.0);
    let s4 = sigma.powi(4);
    Ok(FisherGain {
        gain: s4 * mean_d,
        std_error: s4 * (var_d / m).sqrt(),
        info_y: sm / m,
        info_y_given_s: sj / m,
    })
}

/// Mean and standard error of the compound loss over replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub mse: f64,
    pub std_error: f64,
    pub reps: usize,
}

impl RiskEstimate {
    pub fn from_losses(losses: &[f64]) -> RiskEstimate {
        let reps = losses.len();
        let mse = losses.iter().sum::<f64>() / reps as f64;
        let std_error = if reps > 1 {
            let var = losses.iter().map(|l| (l - mse) * (l - mse)).sum::<f64>() / (reps as f64 - 1.0);
            (var / reps as f64).sqrt()
        } else {
            0.0
        };
        RiskEstimate { mse, std_error, reps }
    }
}

/// `L_n² = n⁻¹ Σ (δ_i - θ_i)²`.
pub fn compound_loss(delta: &[f64], theta: &[f64]) -> f64 {
    assert_eq!(delta.len(), theta.len(), "estimate and truth lengths differ");
    delta.iter().zip(theta).map(|(d, t)| (d - t) * (d - t)).sum::<f64>() / theta.len() as f64
}

/// Simulates `reps` datasets of size `n` from `model` and averages the
/// compound loss of `estimator`.
pub fn bayes_risk_mc<F>(
    model: &OracleMixtureModel,
    estimator: F,
    sigma: f64,
    reps: usize,
    n: usize,
    seed: u64,
) -> Result<RiskEstimate>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if reps == 0 {
        return invalid("reps must be at least 1");
    }
    let losses: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeding::stream(seed, &[r as u64]);
            let draw = model.sample(sigma, n, &mut rng)?;
            let delta = estimator(&draw.data)?;
            Ok(compound_loss(&delta, &draw.theta))
        })
        .collect::<Result<_>>()?;
    Ok(RiskEstimate::from_losses(&losses))
}

/// Fisher informations `(I_Y, I_{Y|S})` by adaptive quadrature over `y`,
/// summing over all label combinations. Only models without continuous
/// auxiliaries are supported.
pub fn fisher_information_quadrature(model: &OracleMixtureModel) -> Result<(f64, f64)> {
    let labels = match &model.components()[0].aux {
        AuxLaw::None => vec![Vec::new()],
        AuxLaw::Categorical { pmfs } => label_combinations(&pmfs.iter().map(Vec::len).collect::<Vec<_>>()),
        AuxLaw::Gaussian { .. } => return invalid("quadrature supports categorical auxiliaries only"),
    };
    let (lo, hi) = integration_range(model);
    let marginal = model.marginal_y();
    let info_y = integrate(|y| marginal.log_density(y, &[]).exp() * marginal.score(y, &[]).powi(2), lo, hi);
    let info_ys = labels
        .iter()
        .map(|s| integrate(|y| model.log_density(y, s).exp() * model.score(y, s).powi(2), lo, hi))
        .sum();
    Ok((info_y, info_ys))
}

/// Bayes risks `σ² - σ⁴ I` of the oracle rules without and with the
/// auxiliaries, by quadrature.
pub fn oracle_risks_quadrature(model: &OracleMixtureModel, sigma: f64) -> Result<(f64, f64)> {
    let (iy, iys) = fisher_information_quadrature(model)?;
    let s2 = sigma * sigma;
    Ok((s2 - s2 * s2 * iy, s2 - s2 * s2 * iys))
}

fn integration_range(model: &OracleMixtureModel) -> (f64, f64) {
    let sd = model.components().iter().map(|c| c.y_var.sqrt()).fold(0.0, f64::max);
    let lo = model.components().iter().map(|c| c.y_mean).fold(f64::INFINITY, f64::min);
    let hi = model.components().iter().map(|c| c.y_mean).fold(f64::NEG_INFINITY, f64::max);
    (lo - 40.0 * sd, hi + 40.0 * sd)
}

fn label_combinations(sizes: &[usize]) -> Vec<Vec<f64>> {
    sizes.iter().fold(vec![Vec::new()], |acc, &size| {
        acc.into_iter()
            .flat_map(|prefix| {
                (0..size).map(move |c| {
                    let mut v = prefix.clone();
                    v.push(c as f64);
                    v
                })
            })
            .collect()
    })
}

/// Piecewise adaptive Simpson rule.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    let width = (hi - lo) / QUAD_PIECES as f64;
    (0..QUAD_PIECES)
        .map(|p| {
            let a = lo + p as f64 * width;
            let b = a + width;
            let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&f, a, b, fa, fm, fb, whole, QUAD_TOL / QUAD_PIECES as f64, QUAD_DEPTH)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_information_is_inverse_variance() {
        let m = OracleMixtureModel::univariate(&[(1.0, 0.4, 2.0)]).unwrap();
        let (iy, iys) = fisher_information_quadrature(&m).unwrap();
        assert!((iy - 0.5).abs() < 1e-10);
        assert!((iys - 0.5).abs() < 1e-10);
    }

    #[test]
    fn simpson_integrates_normal_density() {
        let v = integrate(|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(), -40.0, 40.0);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_grid() {
        assert_eq!(label_combinations(&[2, 3]).len(), 6);
        assert_eq!(label_combinations(&[]), vec![Vec::<f64>::new()]);
    }

    #[test]
    fn loss_aggregation() {
        let r = RiskEstimate::from_losses(&[1.0, 3.0]);
        assert_eq!(r.mse, 2.0);
        assert!((r.std_error - 1.0).abs() < 1e-15);
        assert_eq!(RiskEstimate::from_losses(&[0.7]).std_error, 0.0);
    }
}
