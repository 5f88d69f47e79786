use nit_core::estimator::{
    estimate, fit_nit, mcv_losses, noise_split, resolve_grid, validation_loss, ConstraintOptions, FitOptions, GridSpec,
    McvConfig,
};
use nit_core::oracle::{oracle_nit, AuxLaw, MixtureComponent, OracleMixtureModel, OracleModel};
use nit_core::risk::{compound_loss, RiskEstimate};
use nit_core::seeding;
use nit_core::sim::{generate, Family, SimulationSpec};
use nit_core::{AuxData, Dataset};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn exact_opts() -> FitOptions {
    FitOptions { cov_ridge: 0.0, ..Default::default() }
}

fn small_dataset() -> impl Strategy<Value = Dataset> {
    (8..30usize).prop_flat_map(|n| {
        (prop::collection::vec(-3.0..3.0f64, n), prop::collection::vec(-3.0..3.0f64, n), 0.3..2.0f64).prop_map(
            move |(y, s, sigma)| Dataset::new(y, AuxData::continuous(n, vec![s]).unwrap(), sigma).unwrap(),
        )
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn delta_is_shifted_score(data in small_dataset(), lambda in 1.0..20.0f64) {
        let fit = fit_nit(&data, lambda, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
        let s2 = data.sigma * data.sigma;
        for i in 0..data.n() {
            prop_assert!((fit.delta[i] - data.y[i] - s2 * fit.score.h[i]).abs() <= 1e-12 * (1.0 + fit.delta[i].abs()));
        }
        prop_assert!((mean(&fit.delta) - mean(&data.y)).abs() <= 1e-8);
    }

    #[test]
    fn joint_shift_moves_estimate(data in small_dataset(), lambda in 1.0..100.0f64, c in -50.0..50.0f64) {
        let cons = ConstraintOptions::default();
        let base = fit_nit(&data, lambda, &cons, &exact_opts()).unwrap();
        let moved = data.with_y(data.y.iter().map(|v| v + c).collect()).unwrap();
        let shifted = fit_nit(&moved, lambda, &cons, &exact_opts()).unwrap();
        let tol = 1e-6 * (1.0 + max_abs(&base.delta));
        for (a, b) in base.delta.iter().zip(&shifted.delta) {
            prop_assert!((b - a - c).abs() <= tol, "{a} + {c} vs {b}");
        }
    }

    #[test]
    fn record_order_is_irrelevant(data in small_dataset(), lambda in 1.0..100.0f64, rot in 1..8usize) {
        let n = data.n();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = Dataset::new(perm.iter().map(|&p| data.y[p]).collect(), data.aux.select_rows(&perm), data.sigma).unwrap();
        let cons = ConstraintOptions::default();
        let a = fit_nit(&data, lambda, &cons, &FitOptions::default()).unwrap();
        let b = fit_nit(&permuted, lambda, &cons, &FitOptions::default()).unwrap();
        let tol = 1e-6 * (1.0 + max_abs(&a.delta));
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((b.delta[i] - a.delta[p]).abs() <= tol);
        }
    }
}

#[test]
fn loss_curve_is_bitwise_reproducible() {
    let sim = generate(&SimulationSpec::new(Family::Sim1S3, 80, &[], 5).unwrap()).unwrap();
    let cfg = McvConfig { seed: 99, ..Default::default() };
    let grid = resolve_grid(&cfg.grid, &sim.data, &FitOptions::default()).unwrap();
    let run = || mcv_losses(&sim.data, &grid, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let bits = |c: &nit_core::estimator::LossCurve| -> Vec<u64> { c.successes().iter().map(|(_, l)| l.to_bits()).collect() };
    assert_eq!(bits(&a), bits(&b));
    let other = mcv_losses(&sim.data, &grid, &McvConfig { seed: 100, ..cfg.clone() }, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
    assert_ne!(bits(&a), bits(&other));
}

#[test]
fn estimate_is_shift_equivariant_end_to_end() {
    let sim = generate(&SimulationSpec::new(Family::Sim1S1, 40, &[("sigma_s", 0.5)], 2).unwrap()).unwrap();
    let cfg = McvConfig { seed: 3, ..Default::default() };
    let cons = ConstraintOptions::default();
    let a = estimate(&sim.data, &cfg, &cons, &exact_opts()).unwrap();
    let moved = sim.data.with_y(sim.data.y.iter().map(|v| v + 7.5).collect()).unwrap();
    let b = estimate(&moved, &cfg, &cons, &exact_opts()).unwrap();
    assert!((a.lambda_hat - b.lambda_hat).abs() <= 1e-9 * a.lambda_hat);
    for (x, y) in a.delta.iter().zip(&b.delta) {
        assert!((y - x - 7.5).abs() <= 1e-6 * (1.0 + max_abs(&a.delta)), "{x} {y}");
    }
}

#[test]
fn identity_rule_validation_loss_is_unbiased() {
    // E(U - V)² = σ²(α + 1/α)², so the loss of δ(U) = U has mean σ²(1 + α²).
    let (sigma, alpha, n, draws) = (1.0, 0.1, 50, 10_000);
    let mut rng = seeding::stream(8, &[]);
    let y: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let losses: Vec<f64> = (0..draws)
        .map(|_| {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let (u, v) = noise_split(&y, &z, sigma, alpha);
            validation_loss(&u, &v, sigma, alpha)
        })
        .collect();
    let est = RiskEstimate::from_losses(&losses);
    let target = sigma * sigma * (1.0 + alpha * alpha);
    assert!((est.mse - target).abs() <= 3.0 * est.std_error, "{} ± {} vs {target}", est.mse, est.std_error);
}

#[test]
fn gaussian_sequence_without_auxiliaries() {
    // θ ~ N(0, 1), σ = 1: Bayes risk 1/2.
    let reps = 6;
    let mut losses = Vec::new();
    for r in 0..reps {
        let mut rng = seeding::stream(21, &[r]);
        let theta: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = theta.iter().map(|t| t + rng.sample::<f64, _>(StandardNormal)).collect();
        let data = Dataset::univariate(y, 1.0).unwrap();
        let cfg = McvConfig { seed: r, ..Default::default() };
        let fit = estimate(&data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
        losses.push(compound_loss(&fit.delta, &theta));
    }
    let est = RiskEstimate::from_losses(&losses);
    assert!((est.mse - 0.5).abs() <= 0.15 * 0.5 + 3.0 * est.std_error, "{est:?}");
}

#[test]
fn noise_column_costs_little() {
    let reps = 3;
    let (mut plain, mut padded) = (Vec::new(), Vec::new());
    for r in 0..reps {
        let mut rng = seeding::stream(31, &[r]);
        let n = 1000;
        let theta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = theta.iter().map(|t| t + rng.sample::<f64, _>(StandardNormal)).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let cfg = McvConfig { seed: r, ..Default::default() };
        let a = Dataset::univariate(y.clone(), 1.0).unwrap();
        let b = Dataset::new(y, AuxData::continuous(n, vec![noise]).unwrap(), 1.0).unwrap();
        let cons = ConstraintOptions::default();
        plain.push(compound_loss(&estimate(&a, &cfg, &cons, &FitOptions::default()).unwrap().delta, &theta));
        padded.push(compound_loss(&estimate(&b, &cfg, &cons, &FitOptions::default()).unwrap().delta, &theta));
    }
    let (p, q) = (mean(&plain), mean(&padded));
    assert!((q - p).abs() < 0.2 * p, "{p} vs {q}");
}

#[test]
fn informative_auxiliary_beats_raw_observations() {
    let reps = 100;
    let diffs: Vec<f64> = (0..reps)
        .map(|r| {
            let sim = generate(&SimulationSpec::new(Family::Sim1S3, 100, &[], 1000 + r).unwrap()).unwrap();
            let cfg = McvConfig { seed: r, ..Default::default() };
            let fit = estimate(&sim.data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
            compound_loss(&fit.delta, &sim.theta) - compound_loss(&sim.data.y, &sim.theta)
        })
        .collect();
    let est = RiskEstimate::from_losses(&diffs);
    assert!(est.mse + 1.96 * est.std_error < 0.0, "{est:?}");
}

#[test]
fn matched_copy_model_recovers_oracle() {
    // y, s independent noisy copies of θ ~ N(0, 1) with unit noise.
    let n = 5000;
    let mut rng = seeding::stream(41, &[]);
    let theta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = theta.iter().map(|t| t + rng.sample::<f64, _>(StandardNormal)).collect();
    let s: Vec<f64> = theta.iter().map(|t| t + rng.sample::<f64, _>(StandardNormal)).collect();
    let data = Dataset::new(y, AuxData::continuous(n, vec![s]).unwrap(), 1.0).unwrap();
    let model = OracleMixtureModel::new(vec![MixtureComponent {
        weight: 1.0,
        y_mean: 0.0,
        y_var: 2.0,
        aux: AuxLaw::Gaussian { mean: vec![0.0], cov: vec![2.0], cross: vec![1.0] },
    }])
    .unwrap();
    let oracle = oracle_nit(&OracleModel::Shared(model), &data).unwrap();
    // Coarse grid and one split keep the n = 5000 cross-validation affordable.
    let full = resolve_grid(&GridSpec::Auto, &data, &FitOptions::default()).unwrap();
    let coarse: Vec<f64> = full.iter().step_by(4).copied().collect();
    let cfg = McvConfig { grid: GridSpec::Explicit(coarse), replicates: 1, seed: 1, ..Default::default() };
    let fit = estimate(&data, &cfg, &ConstraintOptions::default(), &FitOptions::default()).unwrap();
    let mad = fit.delta.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    assert!(mad <= 0.05, "mean absolute deviation {mad}");
    for (i, o) in oracle.iter().enumerate().take(20) {
        let closed = (data.y[i] + data.aux.row(i)[0]) / 3.0;
        assert!((o - closed).abs() < 1e-12);
    }
}
