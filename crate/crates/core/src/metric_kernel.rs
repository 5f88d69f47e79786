//! Generalized Mahalanobis metric on pooled records and the Gaussian kernel
//! matrices (value, primary-coordinate gradient, mixed second derivative)
//! that enter the score objective.
//!
//! The kernel is `K(u, v) = exp(-d²(u, v) / (2 λ²))` with
//! `d²(u, v) = (u_c - v_c)ᵀ P (u_c - v_c) + #{categorical j : u_j ≠ v_j}`,
//! where `u_c` is the continuous sub-record and `P` the regularized inverse
//! covariance of the continuous columns.

use faer::Mat;
use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{invalid, NitError, Result};
use crate::linalg;

/// Default ridge applied to the pooled covariance, relative to its diagonal.
pub const DEFAULT_COV_RIDGE: f64 = 1e-6;

/// Rows beyond which the median pairwise distance is taken over an evenly
/// spaced subsample.
const MEDIAN_SUBSAMPLE: usize = 2000;

/// Precision part of the metric: everything except the bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    continuous: Vec<usize>,
    categorical: Vec<usize>,
    /// Row-major `m x m`, `m = continuous.len()`.
    precision: Vec<f64>,
    /// Lower Cholesky factor of the precision, `P = L Lᵀ`.
    whitening: Vec<f64>,
    cov_ridge: f64,
}

impl Metric {
    /// Metric from an explicit precision over the continuous columns.
    pub fn from_precision(
        continuous: Vec<usize>,
        categorical: Vec<usize>,
        precision: Vec<f64>,
    ) -> Result<Self> {
        let m = continuous.len();
        if continuous.first() != Some(&0) {
            return invalid("the primary column must be the first continuous column");
        }
        if precision.len() != m * m {
            return invalid(format!("precision must be {m} x {m}"));
        }
        for i in 0..m {
            for j in 0..i {
                let (a, b) = (precision[i * m + j], precision[j * m + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return invalid("precision matrix is not symmetric");
                }
            }
        }
        let whitening = linalg::cholesky(&precision, m)
            .ok_or_else(|| NitError::InvalidInput("precision is not positive definite".into()))?;
        Ok(Metric { continuous, categorical, precision, whitening, cov_ridge: 0.0 })
    }

    pub fn continuous_columns(&self) -> &[usize] {
        &self.continuous
    }

    pub fn categorical_columns(&self) -> &[usize] {
        &self.categorical
    }

    /// Row-major precision over the continuous columns.
    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn cov_ridge(&self) -> f64 {
        self.cov_ridge
    }

    /// `P₀₀`, the precision entry of the primary coordinate.
    pub fn primary_precision(&self) -> f64 {
        self.precision[0]
    }

    fn dim(&self) -> usize {
        self.continuous.len() + self.categorical.len()
    }

    /// `[P u_c]₀`; its differences give the primary-coordinate kernel slope.
    fn primary_projection(&self, record: &[f64]) -> f64 {
        self.continuous
            .iter()
            .enumerate()
            .map(|(a, &col)| self.precision[a] * record[col])
            .sum()
    }

    /// `Lᵀ u_c`, so that the continuous part of `d²` is a Euclidean distance.
    fn whiten(&self, record: &[f64], out: &mut [f64]) {
        let m = self.continuous.len();
        for (k, o) in out.iter_mut().enumerate() {
            *o = (k..m).map(|j| self.whitening[j * m + k] * record[self.continuous[j]]).sum();
        }
    }
}

/// Metric plus bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricKernelConfig {
    pub metric: Metric,
    pub lambda: f64,
}

impl MetricKernelConfig {
    pub fn new(metric: Metric, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return invalid(format!("bandwidth must be positive, got {lambda}"));
        }
        Ok(MetricKernelConfig { metric, lambda })
    }

    /// Unscaled kernel value `K_λ(u, v)`.
    pub fn kernel(&self, u: &[f64], v: &[f64]) -> f64 {
        (-distance_sq(u, v, &self.metric) / (2.0 * self.lambda * self.lambda)).exp()
    }

    /// `∂K/∂v₁` at `(u, v)`.
    pub fn grad_second(&self, u: &[f64], v: &[f64]) -> f64 {
        let slope = self.metric.primary_projection(u) - self.metric.primary_projection(v);
        self.kernel(u, v) * slope / (self.lambda * self.lambda)
    }

    /// `∂K/∂u₁` at `(u, v)`.
    pub fn grad_first(&self, u: &[f64], v: &[f64]) -> f64 {
        self.grad_second(v, u)
    }

    /// `∂²K/∂u₁∂v₁` at `(u, v)`.
    pub fn grad_mixed(&self, u: &[f64], v: &[f64]) -> f64 {
        let l2 = self.lambda * self.lambda;
        let slope = self.metric.primary_projection(u) - self.metric.primary_projection(v);
        self.kernel(u, v) * (self.metric.primary_precision() / l2 - slope * slope / (l2 * l2))
    }
}

/// Regularized precision `(Σ̂ + ridge·diag(Σ̂))⁻¹` over the continuous columns
/// of `x`, with `Σ̂` the sample covariance (denominator `n - 1`).
pub fn compute_metric(x: &DataMatrix, cov_ridge: f64) -> Result<Metric> {
    if !(cov_ridge >= 0.0 && cov_ridge.is_finite()) {
        return invalid(format!("cov_ridge must be nonnegative, got {cov_ridge}"));
    }
    let continuous = x.continuous_columns();
    let categorical = x.categorical_columns();
    let m = continuous.len();
    let n = x.n();
    let mut mean = vec![0.0; m];
    for i in 0..n {
        let row = x.row(i);
        for (a, &col) in continuous.iter().enumerate() {
            mean[a] += row[col];
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let mut cov = vec![0.0; m * m];
    for i in 0..n {
        let row = x.row(i);
        for a in 0..m {
            let da = row[continuous[a]] - mean[a];
            for b in 0..=a {
                cov[a * m + b] += da * (row[continuous[b]] - mean[b]);
            }
        }
    }
    for a in 0..m {
        for b in 0..=a {
            let v = cov[a * m + b] / (n - 1) as f64;
            cov[a * m + b] = v;
            cov[b * m + a] = v;
        }
    }
    for a in 0..m {
        if !(cov[a * m + a] > 0.0) {
            return Err(NitError::SingularCovariance { column: continuous[a] });
        }
    }
    for a in 0..m {
        cov[a * m + a] *= 1.0 + cov_ridge;
    }
    let precision = linalg::spd_inverse(&cov, m).ok_or_else(|| {
        NitError::Numerical(
            "pooled covariance is not positive definite; increase cov_ridge".to_string(),
        )
    })?;
    let whitening = linalg::cholesky(&precision, m)
        .ok_or_else(|| NitError::Numerical("precision is not positive definite".to_string()))?;
    Ok(Metric { continuous, categorical, precision, whitening, cov_ridge })
}

/// Squared generalized Mahalanobis distance between two records.
pub fn distance_sq(u: &[f64], v: &[f64], metric: &Metric) -> f64 {
    debug_assert_eq!(u.len(), metric.dim());
    debug_assert_eq!(v.len(), metric.dim());
    let m = metric.continuous.len();
    let mut total = 0.0;
    for a in 0..m {
        let da = u[metric.continuous[a]] - v[metric.continuous[a]];
        for b in 0..m {
            total += da * metric.precision[a * m + b] * (u[metric.continuous[b]] - v[metric.continuous[b]]);
        }
    }
    let mismatches = metric.categorical.iter().filter(|&&j| u[j] != v[j]).count();
    total.max(0.0) + mismatches as f64
}

/// The three `n x n` kernel matrices, each scaled by `n⁻²`.
#[derive(Debug, Clone)]
pub struct KernelMatrices {
    pub lambda: f64,
    /// `n⁻² K(x_i, x_j)`.
    pub k: Mat<f64>,
    /// `n⁻² ∂K(x_i, x_j)/∂x_{1j}`.
    pub grad_k: Mat<f64>,
    /// `n⁻² ∂²K(x_i, x_j)/∂x_{1i}∂x_{1j}`.
    pub grad2_k: Mat<f64>,
}

impl KernelMatrices {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// Collapses the derivative matrices to what the score objective needs.
    pub fn system(&self) -> ScoreSystem {
        let n = self.n();
        let b = (0..n).map(|i| (0..n).map(|j| self.grad_k[(i, j)]).sum()).collect();
        let c = (0..n).map(|i| (0..n).map(|j| self.grad2_k[(i, j)]).sum::<f64>()).sum();
        ScoreSystem { k: self.k.clone(), b, c }
    }

    /// Copy with every matrix multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> KernelMatrices {
        let n = self.n();
        KernelMatrices {
            lambda: self.lambda,
            k: Mat::from_fn(n, n, |i, j| factor * self.k[(i, j)]),
            grad_k: Mat::from_fn(n, n, |i, j| factor * self.grad_k[(i, j)]),
            grad2_k: Mat::from_fn(n, n, |i, j| factor * self.grad2_k[(i, j)]),
        }
    }
}

/// The score objective `Ŝ(h) = hᵀ K h + 2 hᵀ b + c` in compact form:
/// `b = ∇K 1` and `c = 1ᵀ ∇²K 1`.
#[derive(Debug, Clone)]
pub struct ScoreSystem {
    pub k: Mat<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl ScoreSystem {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn scaled(&self, factor: f64) -> ScoreSystem {
        let n = self.n();
        ScoreSystem {
            k: Mat::from_fn(n, n, |i, j| factor * self.k[(i, j)]),
            b: self.b.iter().map(|v| factor * v).collect(),
            c: factor * self.c,
        }
    }
}

/// Bandwidth-independent pairwise structure of a dataset: squared distances
/// and primary-coordinate slopes. Building kernels for many bandwidths on the
/// same records reuses it.
#[derive(Debug, Clone)]
pub struct PairwiseGeometry {
    n: usize,
    /// Column-major (equivalently row-major, it is symmetric) `n x n`.
    d2: Vec<f64>,
    /// `[P x_i]₀` per record.
    projection: Vec<f64>,
    primary_precision: f64,
}

impl PairwiseGeometry {
    pub fn new(x: &DataMatrix, metric: &Metric) -> Result<Self> {
        if metric.dim() != x.dim()
            || metric.continuous != x.continuous_columns()
            || metric.categorical != x.categorical_columns()
        {
            return invalid("metric does not match the data matrix column schema");
        }
        let n = x.n();
        let m = metric.continuous.len();
        let mut white = vec![0.0; n * m];
        for i in 0..n {
            metric.whiten(x.row(i), &mut white[i * m..(i + 1) * m]);
        }
        let cats: Vec<Vec<f64>> = (0..n)
            .map(|i| metric.categorical.iter().map(|&j| x.row(i)[j]).collect())
            .collect();
        let mut d2 = vec![0.0; n * n];
        d2.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
            let zj = &white[j * m..(j + 1) * m];
            for (i, out) in col.iter_mut().enumerate() {
                if i == j {
                    continue;
                }
                let zi = &white[i * m..(i + 1) * m];
                let cont: f64 = zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum();
                let mism = cats[i].iter().zip(&cats[j]).filter(|(a, b)| a != b).count();
                *out = cont + mism as f64;
            }
        });
        let projection = (0..n).map(|i| metric.primary_projection(x.row(i))).collect();
        Ok(PairwiseGeometry { n, d2, projection, primary_precision: metric.primary_precision() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn distance_sq(&self, i: usize, j: usize) -> f64 {
        self.d2[j * self.n + i]
    }

    /// Median of the pairwise distances `d(x_i, x_j)`, `i < j`.
    pub fn median_distance(&self) -> f64 {
        let n = self.n;
        let rows: Vec<usize> = if n <= MEDIAN_SUBSAMPLE {
            (0..n).collect()
        } else {
            (0..MEDIAN_SUBSAMPLE).map(|t| t * n / MEDIAN_SUBSAMPLE).collect()
        };
        let mut values = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
        for (a, &i) in rows.iter().enumerate() {
            for &j in &rows[a + 1..] {
                values.push(self.distance_sq(i, j));
            }
        }
        let mid = values.len() / 2;
        let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
        let upper = *upper;
        let median = if values.len() % 2 == 1 {
            upper
        } else {
            let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lower + upper)
        };
        median.sqrt()
    }

    fn kernel_column(&self, lambda: f64, j: usize, col: &mut [f64]) {
        let scale = 1.0 / (2.0 * lambda * lambda);
        for (i, out) in col.iter_mut().enumerate() {
            *out = (-self.d2[j * self.n + i] * scale).exp();
        }
    }

    pub fn kernel_matrices(&self, lambda: f64) -> KernelMatrices {
        let n = self.n;
        let inv_n2 = 1.0 / (n as f64 * n as f64);
        let l2 = lambda * lambda;
        let mut raw = vec![0.0; n * n];
        raw.par_chunks_mut(n).enumerate().for_each(|(j, col)| self.kernel_column(lambda, j, col));
        let p = &self.projection;
        let p00 = self.primary_precision;
        KernelMatrices {
            lambda,
            k: Mat::from_fn(n, n, |i, j| inv_n2 * raw[j * n + i]),
            grad_k: Mat::from_fn(n, n, |i, j| inv_n2 * raw[j * n + i] * (p[i] - p[j]) / l2),
            grad2_k: Mat::from_fn(n, n, |i, j| {
                let s = p[i] - p[j];
                inv_n2 * raw[j * n + i] * (p00 / l2 - s * s / (l2 * l2))
            }),
        }
    }

    /// Same numbers as `kernel_matrices(lambda).system()` without storing the
    /// derivative matrices.
    pub fn score_system(&self, lambda: f64) -> ScoreSystem {
        let n = self.n;
        let inv_n2 = 1.0 / (n as f64 * n as f64);
        let l2 = lambda * lambda;
        let p = &self.projection;
        let p00 = self.primary_precision;
        let mut raw = vec![0.0; n * n];
        raw.par_chunks_mut(n).enumerate().for_each(|(j, col)| self.kernel_column(lambda, j, col));
        let b: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| inv_n2 * raw[i * n + j] * (p[i] - p[j]) / l2).sum())
            .collect();
        let row_c: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let s = p[i] - p[j];
                        inv_n2 * raw[i * n + j] * (p00 / l2 - s * s / (l2 * l2))
                    })
                    .sum()
            })
            .collect();
        let c = row_c.iter().sum();
        ScoreSystem { k: Mat::from_fn(n, n, |i, j| inv_n2 * raw[j * n + i]), b, c }
    }
}

/// Kernel matrices of `x` under `cfg`.
pub fn kernel_matrices(x: &DataMatrix, cfg: &MetricKernelConfig) -> Result<KernelMatrices> {
    Ok(PairwiseGeometry::new(x, &cfg.metric)?.kernel_matrices(cfg.lambda))
}
