//! Finite mixtures over the joint law of `(Y, S)` with exact conditional
//! scores, and the oracle rule `δ(y, s) = y + σ² ∂_y log f(y | s)`.
//!
//! Each component carries the law of `θ` through `y_var = Var(θ) + σ²`, so a
//! model together with `σ` is also a generator for `(θ, Y, S)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{AuxData, ColumnKind, Dataset};
use crate::error::{invalid, Result};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Law of the auxiliary record within one component.
#[derive(Debug, Clone, PartialEq)]
pub enum AuxLaw {
    /// No auxiliary columns.
    None,
    /// `(Y, S)` jointly Gaussian. `cov` is row-major `K x K`, `cross[j] = Cov(Y, S_j)`.
    Gaussian { mean: Vec<f64>, cov: Vec<f64>, cross: Vec<f64> },
    /// Independent categorical columns, independent of `Y`. `pmfs[j][c]` is
    /// the probability of label code `c` in column `j`.
    Categorical { pmfs: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub y_mean: f64,
    pub y_var: f64,
    pub aux: AuxLaw,
}

/// Precomputed conditional law of `Y` given `S` inside a Gaussian component.
#[derive(Debug, Clone)]
struct GaussianCache {
    chol: Vec<f64>,
    log_det: f64,
    /// `Σ⁻¹ c`.
    beta: Vec<f64>,
    cond_var: f64,
}

#[derive(Debug, Clone)]
pub struct OracleMixtureModel {
    components: Vec<MixtureComponent>,
    caches: Vec<Option<GaussianCache>>,
    k: usize,
}

impl PartialEq for OracleMixtureModel {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
    }
}

impl OracleMixtureModel {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return invalid("a mixture needs at least one component");
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return invalid(format!("mixture weights must be positive and sum to 1, got {total}"));
        }
        let k = aux_dim(&components[0].aux);
        let mut caches = Vec::with_capacity(components.len());
        for (idx, c) in components.iter().enumerate() {
            if !(c.y_var > 0.0) || !c.y_mean.is_finite() {
                return invalid(format!("component {idx}: y variance must be positive"));
            }
            if aux_dim(&c.aux) != k || std::mem::discriminant(&c.aux) != std::mem::discriminant(&components[0].aux) {
                return invalid("all components must share one auxiliary schema");
            }
            caches.push(match &c.aux {
                AuxLaw::None => None,
                AuxLaw::Gaussian { mean, cov, cross } => {
                    if mean.len() != k || cov.len() != k * k || cross.len() != k {
                        return invalid(format!("component {idx}: Gaussian block dimensions disagree"));
                    }
                    let chol = linalg::cholesky(cov, k)
                        .ok_or_else(|| crate::NitError::InvalidInput(format!("component {idx}: auxiliary covariance is not positive definite")))?;
                    let beta = linalg::spd_solve(cov, k, cross).expect("factorized above");
                    let cond_var = c.y_var - cross.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                    if !(cond_var > 1e-12 * c.y_var) {
                        return invalid(format!("component {idx}: joint covariance is not positive definite"));
                    }
                    let log_det = linalg::log_det_from_cholesky(&chol, k);
                    Some(GaussianCache { chol, log_det, beta, cond_var })
                }
                AuxLaw::Categorical { pmfs } => {
                    for (j, p) in pmfs.iter().enumerate() {
                        let s: f64 = p.iter().sum();
                        if p.is_empty() || p.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                            return invalid(format!("component {idx}: pmf of column {j} is not a distribution"));
                        }
                    }
                    None
                }
            });
        }
        if let AuxLaw::Categorical { pmfs } = &components[0].aux {
            let sizes: Vec<usize> = pmfs.iter().map(Vec::len).collect();
            if components.iter().any(|c| match &c.aux {
                AuxLaw::Categorical { pmfs } => pmfs.iter().map(Vec::len).collect::<Vec<_>>() != sizes,
                _ => true,
            }) {
                return invalid("categorical label sets differ across components");
            }
        }
        Ok(OracleMixtureModel { components, caches, k })
    }

    /// Mixture of independent normals in `y` with no auxiliaries.
    pub fn univariate(parts: &[(f64, f64, f64)]) -> Result<Self> {
        OracleMixtureModel::new(
            parts
                .iter()
                .map(|&(weight, y_mean, y_var)| MixtureComponent { weight, y_mean, y_var, aux: AuxLaw::None })
                .collect(),
        )
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Number of auxiliary columns.
    pub fn aux_dim(&self) -> usize {
        self.k
    }

    pub fn aux_kinds(&self) -> Vec<ColumnKind> {
        let kind = match self.components[0].aux {
            AuxLaw::Categorical { .. } => ColumnKind::Categorical,
            _ => ColumnKind::Continuous,
        };
        vec![kind; self.k]
    }

    /// Model of `Y` alone, obtained by dropping the auxiliary blocks.
    pub fn marginal_y(&self) -> OracleMixtureModel {
        let components = self
            .components
            .iter()
            .map(|c| MixtureComponent { aux: AuxLaw::None, ..c.clone() })
            .collect();
        OracleMixtureModel { components, caches: vec![None; self.components.len()], k: 0 }
    }

    /// Per component: `log w_k + log φ_k(y, s)` and `∂_y log φ_k(y, s)`.
    fn component_terms(&self, y: f64, s: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
        assert_eq!(s.len(), self.k, "auxiliary record has the wrong length");
        let s = s.to_vec();
        self.components.iter().zip(&self.caches).map(move |(c, cache)| match (&c.aux, cache) {
            (AuxLaw::Gaussian { mean, .. }, Some(g)) => {
                let k = self.k;
                let diff: Vec<f64> = s.iter().zip(mean).map(|(a, b)| a - b).collect();
                let mut z = diff.clone();
                forward_sub(&g.chol, k, &mut z);
                let quad: f64 = z.iter().map(|v| v * v).sum();
                let log_s = -0.5 * (k as f64 * LN_2PI + g.log_det + quad);
                let cond_mean = c.y_mean + g.beta.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>();
                let r = y - cond_mean;
                let log_y = -0.5 * (LN_2PI + g.cond_var.ln() + r * r / g.cond_var);
                (c.weight.ln() + log_s + log_y, -r / g.cond_var)
            }
            (AuxLaw::Categorical { pmfs }, _) => {
                let log_s: f64 = pmfs
                    .iter()
                    .zip(&s)
                    .map(|(p, &v)| label_index(v, p.len()).map_or(f64::NEG_INFINITY, |i| p[i].ln()))
                    .sum();
                let r = y - c.y_mean;
                let log_y = -0.5 * (LN_2PI + c.y_var.ln() + r * r / c.y_var);
                (c.weight.ln() + log_s + log_y, -r / c.y_var)
            }
            _ => {
                let r = y - c.y_mean;
                let log_y = -0.5 * (LN_2PI + c.y_var.ln() + r * r / c.y_var);
                (c.weight.ln() + log_y, -r / c.y_var)
            }
        })
    }

    /// `log f(y, s)` by log-sum-exp over components.
    pub fn log_density(&self, y: f64, s: &[f64]) -> f64 {
        let terms: Vec<(f64, f64)> = self.component_terms(y, s).collect();
        let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return top;
        }
        top + terms.iter().map(|t| (t.0 - top).exp()).sum::<f64>().ln()
    }

    /// `∂_y log f(y, s) = Σ_k r_k(y, s) ∂_y log φ_k(y, s)`.
    ///
    /// An auxiliary record with zero probability under every component
    /// carries no information and falls back to the score of `Y` alone.
    pub fn score(&self, y: f64, s: &[f64]) -> f64 {
        let terms: Vec<(f64, f64)> = self.component_terms(y, s).collect();
        let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return self.marginal_y().score(y, &[]);
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (lw, g) in terms {
            let r = (lw - top).exp();
            num += r * g;
            den += r;
        }
        num / den
    }

    /// Posterior component responsibilities at `(y, s)`.
    pub fn responsibilities(&self, y: f64, s: &[f64]) -> Vec<f64> {
        let terms: Vec<f64> = self.component_terms(y, s).map(|t| t.0).collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = terms.iter().map(|t| (t - top).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// Draws `n` triples `(θ, y, s)` with `Y = θ + N(0, σ²)`.
    ///
    /// Requires `y_var ≥ σ²` in every component; within a Gaussian component
    /// `θ` shares the cross-covariance of `Y` with `S`.
    pub fn sample<R: Rng + ?Sized>(&self, sigma: f64, n: usize, rng: &mut R) -> Result<Sample> {
        let s2 = sigma * sigma;
        let tol = 1e-12 * (1.0 + s2);
        for (idx, c) in self.components.iter().enumerate() {
            let theta_var = c.y_var - s2;
            if theta_var < -tol {
                return invalid(format!("component {idx}: y variance {} is below sigma² {s2}", c.y_var));
            }
            if let Some(g) = &self.caches[idx] {
                if g.cond_var - s2 < -tol {
                    return invalid(format!("component {idx}: Cov(θ, S) is inconsistent with sigma"));
                }
            }
        }
        let cdf: Vec<f64> = self
            .components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        let k = self.k;
        let mut theta = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut aux = Vec::with_capacity(n * k);
        let mut z = vec![0.0; k];
        for _ in 0..n {
            let u: f64 = rng.random();
            let idx = cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
            let c = &self.components[idx];
            let theta_i = match (&c.aux, &self.caches[idx]) {
                (AuxLaw::Gaussian { mean, .. }, Some(g)) => {
                    for zj in z.iter_mut() {
                        *zj = rng.sample(StandardNormal);
                    }
                    let mut s = mean.clone();
                    for a in 0..k {
                        for b in 0..=a {
                            s[a] += g.chol[a * k + b] * z[b];
                        }
                    }
                    let cond_mean =
                        c.y_mean + g.beta.iter().zip(s.iter().zip(mean)).map(|(be, (si, m))| be * (si - m)).sum::<f64>();
                    aux.extend_from_slice(&s);
                    let sd = (g.cond_var - s2).max(0.0).sqrt();
                    cond_mean + sd * rng.sample::<f64, _>(StandardNormal)
                }
                (AuxLaw::Categorical { pmfs }, _) => {
                    for p in pmfs {
                        aux.push(draw_label(p, rng) as f64);
                    }
                    c.y_mean + (c.y_var - s2).max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal)
                }
                _ => c.y_mean + (c.y_var - s2).max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal),
            };
            theta.push(theta_i);
            y.push(theta_i + sigma * rng.sample::<f64, _>(StandardNormal));
        }
        let aux = AuxData::from_rows(n, self.aux_kinds(), aux)?;
        Ok(Sample { theta, data: Dataset::new(y, aux, sigma)? })
    }
}

/// Draw from a mixture model: true means plus the observed dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub theta: Vec<f64>,
    pub data: Dataset,
}

/// Oracle for a dataset: one mixture for every record, or one mixture per
/// block of consecutive records.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleModel {
    Shared(OracleMixtureModel),
    /// `(start index, model)` pairs with increasing starts, the first at 0.
    Blocks(Vec<(usize, OracleMixtureModel)>),
}

impl OracleModel {
    pub fn model_for(&self, i: usize) -> &OracleMixtureModel {
        match self {
            OracleModel::Shared(m) => m,
            OracleModel::Blocks(blocks) => {
                let pos = blocks.partition_point(|(start, _)| *start <= i);
                &blocks[pos.max(1) - 1].1
            }
        }
    }

    /// Same structure with every mixture reduced to its `Y` marginal.
    pub fn marginal_y(&self) -> OracleModel {
        match self {
            OracleModel::Shared(m) => OracleModel::Shared(m.marginal_y()),
            OracleModel::Blocks(b) => OracleModel::Blocks(b.iter().map(|(s, m)| (*s, m.marginal_y())).collect()),
        }
    }
}

/// `∂_y log f(y | s)` under `model`.
pub fn oracle_score(model: &OracleMixtureModel, y: f64, s: &[f64]) -> Result<f64> {
    if s.len() != model.aux_dim() {
        return invalid(format!("auxiliary record has {} entries, model expects {}", s.len(), model.aux_dim()));
    }
    Ok(model.score(y, s))
}

/// Oracle rule `y_i + σ² ∂_y log f(y_i | s_i)` for every record.
pub fn oracle_nit(model: &OracleModel, data: &Dataset) -> Result<Vec<f64>> {
    let s2 = data.sigma * data.sigma;
    (0..data.n())
        .map(|i| {
            let m = model.model_for(i);
            oracle_score(m, data.y[i], data.aux.row(i)).map(|g| data.y[i] + s2 * g)
        })
        .collect()
}

fn aux_dim(aux: &AuxLaw) -> usize {
    match aux {
        AuxLaw::None => 0,
        AuxLaw::Gaussian { mean, .. } => mean.len(),
        AuxLaw::Categorical { pmfs } => pmfs.len(),
    }
}

fn label_index(v: f64, size: usize) -> Option<usize> {
    (v >= 0.0 && v.fract() == 0.0 && v < size as f64).then_some(v as usize)
}

fn draw_label<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pmf.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Solves `L z = b` in place for row-major lower-triangular `L`.
fn forward_sub(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut v = b[i];
        for j in 0..i {
            v -= l[i * k + j] * b[j];
        }
        b[i] = v / l[i * k + i];
    }
}
