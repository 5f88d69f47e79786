use nit_core::metric_kernel::{compute_metric, kernel_matrices, KernelMatrices, MetricKernelConfig};
use nit_core::{ColumnKind, DataMatrix};
use proptest::prelude::*;

const FD_STEP: f64 = 1e-5;

/// Records with a continuous primary column, `cont` continuous auxiliaries
/// and `cat` binary categorical auxiliaries.
fn mixed_data(max_n: usize) -> impl Strategy<Value = DataMatrix> {
    (6..=max_n, 0..3usize, 0..2usize).prop_flat_map(|(n, cont, cat)| {
        let dim = 1 + cont + cat;
        prop::collection::vec(-3.0..3.0f64, n * dim).prop_map(move |mut v| {
            for i in 0..n {
                for j in 1 + cont..dim {
                    v[i * dim + j] = if v[i * dim + j] > 0.0 { 1.0 } else { 0.0 };
                }
            }
            let mut kinds = vec![ColumnKind::Continuous; 1 + cont];
            kinds.extend(vec![ColumnKind::Categorical; cat]);
            DataMatrix::new(n, kinds, v).unwrap()
        })
    })
}

fn config(x: &DataMatrix, lambda: f64, ridge: f64) -> MetricKernelConfig {
    MetricKernelConfig::new(compute_metric(x, ridge).unwrap(), lambda).unwrap()
}

fn shifted(x: &DataMatrix, i: usize, dy: f64) -> Vec<f64> {
    let mut r = x.row(i).to_vec();
    r[0] += dy;
    r
}

fn max_rel_diff(a: &KernelMatrices, b: &KernelMatrices) -> f64 {
    let n = a.n();
    let mut worst: f64 = 0.0;
    for m in 0..3 {
        let (p, q) = match m {
            0 => (&a.k, &b.k),
            1 => (&a.grad_k, &b.grad_k),
            _ => (&a.grad2_k, &b.grad2_k),
        };
        for i in 0..n {
            for j in 0..n {
                let scale = p[(i, j)].abs().max(1.0 / (n * n) as f64 * 1e-3);
                worst = worst.max((p[(i, j)] - q[(i, j)]).abs() / scale);
            }
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_matrix_is_psd(x in mixed_data(25), lambda in 0.2..5.0f64, seed in any::<u64>()) {
        let km = kernel_matrices(&x, &config(&x, lambda, 1e-6)).unwrap();
        let n = x.n();
        let mut state = seed | 1;
        for _ in 0..100 {
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += v[i] * km.k[(i, j)] * v[j];
                }
            }
            prop_assert!(quad >= -1e-10, "vKv = {quad}");
        }
    }

    #[test]
    fn structural_identities(x in mixed_data(20), lambda in 0.2..5.0f64) {
        let cfg = config(&x, lambda, 1e-6);
        let km = kernel_matrices(&x, &cfg).unwrap();
        let n = x.n();
        let inv = 1.0 / (n * n) as f64;
        let p11 = cfg.metric.primary_precision();
        for i in 0..n {
            prop_assert_eq!(km.k[(i, i)], inv);
            prop_assert_eq!(km.grad_k[(i, i)], 0.0);
            prop_assert!((km.grad2_k[(i, i)] - inv * p11 / (lambda * lambda)).abs() <= 1e-14 * inv * p11 / (lambda * lambda));
            for j in 0..n {
                prop_assert_eq!(km.k[(i, j)], km.k[(j, i)]);
                prop_assert!(km.k[(i, j)] > 0.0 && km.k[(i, j)] <= inv);
                prop_assert!((km.grad_k[(i, j)] + km.grad_k[(j, i)]).abs() <= 1e-15 * inv);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences(x in mixed_data(12), lambda in 0.3..4.0f64) {
        let cfg = config(&x, lambda, 1e-6);
        let km = kernel_matrices(&x, &cfg).unwrap();
        let n = x.n();
        let scale = (n * n) as f64;
        for i in 0..n {
            for j in 0..n {
                let ui = x.row(i);
                let fd1 = (cfg.kernel(ui, &shifted(&x, j, FD_STEP)) - cfg.kernel(ui, &shifted(&x, j, -FD_STEP))) / (2.0 * FD_STEP);
                prop_assert!((km.grad_k[(i, j)] * scale - fd1).abs() <= 1e-6, "grad_k[{i}][{j}]");
                let fd2 = (cfg.grad_second(&shifted(&x, i, FD_STEP), x.row(j))
                    - cfg.grad_second(&shifted(&x, i, -FD_STEP), x.row(j)))
                    / (2.0 * FD_STEP);
                prop_assert!((km.grad2_k[(i, j)] * scale - fd2).abs() <= 1e-6, "grad2_k[{i}][{j}]");
            }
        }
    }

    #[test]
    fn auxiliary_rescaling_is_absorbed(x in mixed_data(15), lambda in 0.3..4.0f64, c in 0.01..100.0f64) {
        prop_assume!(x.continuous_columns().len() > 1);
        let base = kernel_matrices(&x, &config(&x, lambda, 0.0)).unwrap();
        let mut y = x.clone();
        let col = x.continuous_columns()[1];
        for i in 0..x.n() {
            y.set(i, col, c * x.row(i)[col]);
        }
        let scaled = kernel_matrices(&y, &config(&y, lambda, 0.0)).unwrap();
        prop_assert!(max_rel_diff(&base, &scaled) <= 1e-8);
    }

    #[test]
    fn row_permutation_permutes_matrices(x in mixed_data(15), lambda in 0.3..4.0f64, rot in 1..14usize) {
        let n = x.n();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let values: Vec<f64> = perm.iter().flat_map(|&p| x.row(p).to_vec()).collect();
        let kinds = (0..x.dim()).map(|j| if x.categorical_columns().contains(&j) { ColumnKind::Categorical } else { ColumnKind::Continuous }).collect();
        let px = DataMatrix::new(n, kinds, values).unwrap();
        let a = kernel_matrices(&x, &config(&x, lambda, 1e-6)).unwrap();
        let b = kernel_matrices(&px, &config(&px, lambda, 1e-6)).unwrap();
        let inv = 1.0 / (n * n) as f64;
        for i in 0..n {
            for j in 0..n {
                let (pi, pj) = (perm[i], perm[j]);
                prop_assert!((b.k[(i, j)] - a.k[(pi, pj)]).abs() <= 1e-12 * inv);
                prop_assert!((b.grad_k[(i, j)] - a.grad_k[(pi, pj)]).abs() <= 1e-10 * inv);
                prop_assert!((b.grad2_k[(i, j)] - a.grad2_k[(pi, pj)]).abs() <= 1e-10 * inv);
            }
        }
    }
}

#[test]
fn standard_normal_columns_have_identity_precision() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let values: Vec<f64> = (0..2 * n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let x = DataMatrix::new(n, vec![ColumnKind::Continuous; 2], values).unwrap();
    let p = compute_metric(&x, 0.0).unwrap();
    let expect = [1.0, 0.0, 0.0, 1.0];
    for (a, b) in p.precision().iter().zip(expect) {
        // Sampling error of a precision entry is about sqrt(2/n).
        assert!((a - b).abs() < 5.0 * (2.0 / n as f64).sqrt(), "{:?}", p.precision());
    }
}

#[test]
fn two_point_off_diagonal_kernel() {
    let x = DataMatrix::new(2, vec![ColumnKind::Continuous], vec![0.0, 1.0]).unwrap();
    let metric = nit_core::metric_kernel::Metric::from_precision(vec![0], vec![], vec![1.0]).unwrap();
    let km = kernel_matrices(&x, &MetricKernelConfig::new(metric, 1.0).unwrap()).unwrap();
    assert!((km.k[(0, 1)] - 0.606_530_659_712_633_4 / 4.0).abs() < 1e-15);
}
