use super::*;
use crate::data::{ColumnKind, DataMatrix};
use crate::metric_kernel::{compute_metric, Metric, PairwiseGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_dim(xs: &[f64], lambda: f64) -> ScoreSystem {
    let x = DataMatrix::new(xs.len(), vec![ColumnKind::Continuous], xs.to_vec()).unwrap();
    let metric = Metric::from_precision(vec![0], vec![], vec![1.0]).unwrap();
    PairwiseGeometry::new(&x, &metric).unwrap().score_system(lambda)
}

fn random_system(n: usize, dim: usize, lambda: f64, seed: u64) -> ScoreSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = DataMatrix::new(n, vec![ColumnKind::Continuous; dim], values).unwrap();
    let metric = compute_metric(&x, 1e-6).unwrap();
    PairwiseGeometry::new(&x, &metric).unwrap().score_system(lambda)
}

#[test]
fn two_point_closed_form() {
    let sys = one_dim(&[0.0, 1.0], 1.0);
    let settings = SolverSettings { ridge: 0.0, ..Default::default() };
    let sol = solve_score(&sys, &ConstraintSet::zero_sum(), &settings).unwrap();
    let k = (-0.5f64).exp();
    let t = k / (1.0 - k);
    assert!((sol.h[0] - t).abs() < 1e-8, "{:?}", sol.h);
    assert!((sol.h[1] + t).abs() < 1e-8);
    assert!((t - 1.5415).abs() < 1e-4);
}

#[test]
fn symmetric_data_gives_odd_solution() {
    let xs = [-2.0, -1.1, -0.3, 0.0, 0.3, 1.1, 2.0];
    let sol = solve_score(&one_dim(&xs, 0.8), &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    let n = xs.len();
    for i in 0..n {
        assert!((sol.h[i] + sol.h[n - 1 - i]).abs() < 1e-8, "{:?}", sol.h);
    }
}

#[test]
fn random_probes_do_not_improve() {
    let sys = random_system(40, 2, 1.5, 3);
    let sol = solve_score(&sys, &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = sys.n();
    for _ in 0..1000 {
        let scale = 10f64.powf(rng.random_range(-4.0..1.0));
        let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        d.iter_mut().for_each(|v| *v = (*v - mean) * scale);
        let probe: Vec<f64> = sol.h.iter().zip(&d).map(|(a, b)| a + b).collect();
        assert!(sol.objective <= ksd_objective(&probe, &sys) + 1e-8);
    }
}

#[test]
fn objective_at_zero_is_constant_term() {
    let sys = random_system(15, 3, 1.0, 5);
    assert_eq!(ksd_objective(&vec![0.0; 15], &sys), sys.c);
}

#[test]
fn objective_matches_solution_and_residual_is_small() {
    let sys = random_system(60, 2, 2.0, 9);
    let sol = solve_score(&sys, &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    assert_eq!(sol.objective, ksd_objective(&sol.h, &sys));
    assert!(sol.kkt_residual <= 1e-8);
    assert!(sol.h.iter().sum::<f64>().abs() <= 1e-8 * 60.0);
    assert!(sol.objective >= -1e-8);
}

#[test]
fn unscaled_objective_has_same_minimizer() {
    let sys = random_system(30, 2, 0.6, 21);
    let settings = SolverSettings::default();
    let a = solve_score(&sys, &ConstraintSet::zero_sum(), &settings).unwrap();
    let big = sys.scaled(900.0);
    let scaled_settings = SolverSettings { ridge: settings.ridge * 900.0, ..settings };
    let b = solve_score(&big, &ConstraintSet::zero_sum(), &scaled_settings).unwrap();
    for (x, y) in a.h.iter().zip(&b.h) {
        assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn solves_are_deterministic() {
    let sys = random_system(50, 3, 1.0, 2);
    let a = solve_score(&sys, &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    let b = solve_score(&sys, &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn singular_kernel_uses_minimum_norm() {
    // Duplicated records make K exactly singular without a ridge.
    let sys = one_dim(&[0.0, 0.0, 1.0, 1.0, 2.5], 1.0);
    let settings = SolverSettings { ridge: 0.0, ..Default::default() };
    let sol = solve_score(&sys, &ConstraintSet::zero_sum(), &settings).unwrap();
    assert!((sol.h[0] - sol.h[1]).abs() < 1e-7);
    assert!((sol.h[2] - sol.h[3]).abs() < 1e-7);
}

#[test]
fn zero_box_pins_solution() {
    let sys = random_system(12, 1, 1.0, 4);
    let cons = ConstraintSet { zero_sum: true, box_bound: Some(vec![0.0; 12]), monotone: None };
    let sol = solve_score(&sys, &cons, &SolverSettings::default()).unwrap();
    assert!(sol.h.iter().all(|v| v.abs() < 1e-8), "{:?}", sol.h);
}

#[test]
fn negative_bound_is_infeasible() {
    let sys = random_system(5, 1, 1.0, 4);
    let mut c = vec![1.0; 5];
    c[2] = -1.0;
    let cons = ConstraintSet { zero_sum: true, box_bound: Some(c), monotone: None };
    assert!(matches!(
        solve_score(&sys, &cons, &SolverSettings::default()),
        Err(NitError::Infeasible(_))
    ));
}

#[test]
fn box_constrained_solution_beats_feasible_probes() {
    let sys = random_system(25, 2, 0.6, 8);
    let free = solve_score(&sys, &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    let cap = 0.5 * free.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c = vec![cap; 25];
    let cons = ConstraintSet { zero_sum: true, box_bound: Some(c.clone()), monotone: None };
    let sol = solve_score(&sys, &cons, &SolverSettings::default()).unwrap();
    assert!(!sol.active_constraints.is_empty());
    assert!(sol.h.iter().all(|v| v.abs() <= cap + 1e-8));
    assert!(sol.h.iter().sum::<f64>().abs() <= 1e-8 * 25.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        // Random feasible point: clip, then fix the sum on unclipped coordinates.
        let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
        let mut p: Vec<f64> = sol.h.iter().map(|v| (v + scale * rng.random_range(-1.0..1.0)).clamp(-cap, cap)).collect();
        let excess = p.iter().sum::<f64>();
        let free_idx: Vec<usize> = (0..25).filter(|&i| p[i].abs() < cap - 1e-3).collect();
        if free_idx.is_empty() {
            continue;
        }
        let shift = excess / free_idx.len() as f64;
        for &i in &free_idx {
            p[i] -= shift;
        }
        if p.iter().any(|v| v.abs() > cap) {
            continue;
        }
        assert!(sol.objective <= ksd_objective(&p, &sys) + 1e-8);
    }
}

#[test]
fn box_solvers_agree() {
    for (seed, n, cap, zero_sum) in [(21, 30, 0.5, true), (22, 60, 2.0, true), (23, 40, 1.0, false), (24, 80, 0.2, true)] {
        let sys = random_system(n, 2, 0.8, seed);
        let mut c = vec![cap; n];
        c[0] = 0.0;
        let cons = ConstraintSet { zero_sum, box_bound: Some(c.clone()), monotone: None };
        let settings = SolverSettings { max_iter: 200_000, ..Default::default() };
        let active = boxqp::solve(&sys, zero_sum, &c, &settings).unwrap();
        assert!(active.residual <= 1e-8);
        let split = admm::solve(&sys, &cons, &settings).unwrap();
        let (fa, fs) = (ksd_objective(&active.h, &sys), ksd_objective(&split.h, &sys));
        assert!(fa <= fs + 1e-9 * fs.abs().max(1e-12), "seed {seed}: {fa} vs {fs}");
        assert_eq!(active.h[0], 0.0);
    }
}

#[test]
fn loose_box_matches_equality_solution() {
    let sys = random_system(30, 2, 3.0, 25);
    let free = solve_score(&sys, &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    let cap = 2.0 * free.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cons = ConstraintSet { zero_sum: true, box_bound: Some(vec![cap; 30]), monotone: None };
    let boxed = solve_score(&sys, &cons, &SolverSettings::default()).unwrap();
    assert!(boxed.active_constraints.is_empty());
    for (a, b) in free.h.iter().zip(&boxed.h) {
        assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
    }
}

#[test]
fn monotone_constraint_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let xs: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
    let sys = one_dim(&xs, 0.15);
    let order = MonotoneOrder::from_y(&xs, 1.0).unwrap();
    let cons = ConstraintSet { zero_sum: true, box_bound: None, monotone: Some(order.clone()) };
    let sol = solve_score(&sys, &cons, &SolverSettings::default()).unwrap();
    // δ = x + h is nondecreasing along the sorted order.
    for w in order.order().windows(2) {
        let (a, b) = (w[0], w[1]);
        assert!(xs[a] + sol.h[a] <= xs[b] + sol.h[b] + 1e-7);
    }
}

#[test]
fn kappa_on_diagonal_with_zero_score_is_one() {
    let metric = Metric::from_precision(vec![0], vec![], vec![1.0]).unwrap();
    let cfg = MetricKernelConfig::new(metric, 1.0).unwrap();
    assert_eq!(kappa_eval(|_| 0.0, &[0.3], &[0.3], &cfg), 1.0);
}

#[test]
fn kappa_double_sum_reproduces_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 20;
    let values: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = DataMatrix::new(n, vec![ColumnKind::Continuous; 3], values).unwrap();
    let metric = compute_metric(&x, 1e-6).unwrap();
    let cfg = MetricKernelConfig::new(metric.clone(), 0.9).unwrap();
    let sys = PairwiseGeometry::new(&x, &metric).unwrap().score_system(0.9);
    let sol = solve_score(&sys, &ConstraintSet::zero_sum(), &SolverSettings::default()).unwrap();
    let lookup = |r: &[f64]| -> f64 {
        let i = (0..n).find(|&i| x.row(i) == r).unwrap();
        sol.h[i]
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += kappa_eval(lookup, x.row(i), x.row(j), &cfg);
        }
    }
    total /= (n * n) as f64;
    assert!((total - sol.objective).abs() < 1e-10, "{total} vs {}", sol.objective);
}
