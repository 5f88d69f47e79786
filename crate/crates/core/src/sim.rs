//! Synthetic study families with their exact oracle models, and a seeded
//! study runner producing method-by-setting risk tables.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baselines::{james_stein, silverman_bandwidth, tweedie_kde};
use crate::data::{AuxData, ColumnKind, Dataset};
use crate::error::{invalid, NitError, Result};
use crate::estimator::{estimate, ConstraintOptions, FitOptions, McvConfig};
use crate::oracle::{oracle_nit, AuxLaw, MixtureComponent, OracleMixtureModel, OracleModel};
use crate::risk::{compound_loss, RiskEstimate};
use crate::seeding::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Sim1S1,
    Sim1S2,
    Sim1S3,
    Sim1S4,
    Sim3S1,
    Sim3S2,
    Sim3S3,
    Sim3S4,
    TwoSampleS1,
    TwoSampleS2,
    BenefitVsK,
}

impl Family {
    pub const ALL: [Family; 11] = [
        Family::Sim1S1,
        Family::Sim1S2,
        Family::Sim1S3,
        Family::Sim1S4,
        Family::Sim3S1,
        Family::Sim3S2,
        Family::Sim3S3,
        Family::Sim3S4,
        Family::TwoSampleS1,
        Family::TwoSampleS2,
        Family::BenefitVsK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Sim1S1 => "sim1_s1",
            Family::Sim1S2 => "sim1_s2",
            Family::Sim1S3 => "sim1_s3",
            Family::Sim1S4 => "sim1_s4",
            Family::Sim3S1 => "sim3_s1",
            Family::Sim3S2 => "sim3_s2",
            Family::Sim3S3 => "sim3_s3",
            Family::Sim3S4 => "sim3_s4",
            Family::TwoSampleS1 => "twosample_s1",
            Family::TwoSampleS2 => "twosample_s2",
            Family::BenefitVsK => "benefit_vs_K",
        }
    }

    /// Parameters with their default and admissible range. A degenerate
    /// range marks a parameter fixed by the family. The sparsity count `k`
    /// defaults to `n / 20`.
    fn parameters(self) -> &'static [ParamRule] {
        const S_FIXED_SS_FREE: &[ParamRule] = &[
            ParamRule { name: "sigma", default: 0.1, lo: 0.1, hi: 0.1, integer: false },
            ParamRule { name: "sigma_s", default: 0.1, lo: 0.1, hi: 1.0, integer: false },
        ];
        const SS_FIXED_S_FREE: &[ParamRule] = &[
            ParamRule { name: "sigma", default: 0.1, lo: 0.1, hi: 1.0, integer: false },
            ParamRule { name: "sigma_s", default: 1.0, lo: 1.0, hi: 1.0, integer: false },
        ];
        const BOTH_HALF: &[ParamRule] = &[
            ParamRule { name: "sigma", default: 0.5, lo: 0.5, hi: 0.5, integer: false },
            ParamRule { name: "sigma_s", default: 0.5, lo: 0.5, hi: 0.5, integer: false },
        ];
        const SIM3_SS_FREE: &[ParamRule] = &[
            ParamRule { name: "sigma", default: 0.5, lo: 0.5, hi: 0.5, integer: false },
            ParamRule { name: "sigma_s", default: 0.5, lo: 0.1, hi: 1.0, integer: false },
        ];
        const SIM3_S_FREE: &[ParamRule] = &[
            ParamRule { name: "sigma", default: 0.5, lo: 0.1, hi: 1.0, integer: false },
            ParamRule { name: "sigma_s", default: 0.5, lo: 0.5, hi: 0.5, integer: false },
        ];
        const BERNOULLI: &[ParamRule] = &[ParamRule { name: "p", default: 0.2, lo: 0.05, hi: 0.5, integer: false }];
        const SPARSITY: &[ParamRule] = &[ParamRule { name: "k", default: f64::NAN, lo: 1.0, hi: f64::INFINITY, integer: true }];
        const AUX_COUNT: &[ParamRule] = &[ParamRule { name: "K", default: 1.0, lo: 1.0, hi: 12.0, integer: true }];
        match self {
            Family::Sim1S1 => S_FIXED_SS_FREE,
            Family::Sim1S2 => SS_FIXED_S_FREE,
            Family::Sim1S3 => BOTH_HALF,
            Family::Sim1S4 => BERNOULLI,
            Family::Sim3S1 | Family::Sim3S3 => SIM3_SS_FREE,
            Family::Sim3S2 | Family::Sim3S4 => SIM3_S_FREE,
            Family::TwoSampleS1 | Family::TwoSampleS2 => SPARSITY,
            Family::BenefitVsK => AUX_COUNT,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = NitError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NitError::InvalidInput(format!("unknown family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy)]
struct ParamRule {
    name: &'static str,
    default: f64,
    lo: f64,
    hi: f64,
    integer: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub family: Family,
    pub n: usize,
    /// Every parameter of the family, defaults filled in, in a fixed order.
    params: Vec<(&'static str, f64)>,
    pub seed: u64,
}

impl SimulationSpec {
    /// Spec with `overrides` applied on top of the family defaults.
    pub fn new(family: Family, n: usize, overrides: &[(&str, f64)], seed: u64) -> Result<Self> {
        if n < 4 {
            return invalid(format!("n must be at least 4, got {n}"));
        }
        let rules = family.parameters();
        for (name, _) in overrides {
            if !rules.iter().any(|r| r.name == *name) {
                let known: Vec<&str> = rules.iter().map(|r| r.name).collect();
                return invalid(format!("{family} has no parameter '{name}' (parameters: {})", known.join(", ")));
            }
        }
        let mut params = Vec::with_capacity(rules.len());
        for rule in rules {
            let default = if rule.name == "k" { (n / 20).max(1) as f64 } else { rule.default };
            let value = overrides.iter().rev().find(|(k, _)| *k == rule.name).map_or(default, |(_, v)| *v);
            let tol = 1e-12 * (1.0 + rule.lo.abs());
            if !(value >= rule.lo - tol && value <= rule.hi + tol) {
                return invalid(format!(
                    "{family}: {} = {value} is outside [{}, {}]",
                    rule.name, rule.lo, rule.hi
                ));
            }
            if rule.integer && value.fract() != 0.0 {
                return invalid(format!("{family}: {} must be an integer", rule.name));
            }
            params.push((rule.name, value));
        }
        let spec = SimulationSpec { family, n, params, seed };
        match family {
            Family::TwoSampleS1 if 2 * spec.count("k") > n => invalid(format!("twosample_s1 needs 2k <= n, got k = {}", spec.count("k"))),
            Family::TwoSampleS2 if spec.count("k") >= n / 2 => invalid(format!("twosample_s2 needs k < n/2, got k = {}", spec.count("k"))),
            _ => Ok(spec),
        }
    }

    pub fn params(&self) -> &[(&'static str, f64)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).expect("parameter of this family")
    }

    fn count(&self, name: &str) -> usize {
        self.param(name) as usize
    }

    /// `name=value` pairs separated by `;`.
    pub fn param_string(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }

    pub fn with_seed(&self, seed: u64) -> SimulationSpec {
        SimulationSpec { seed, ..self.clone() }
    }

    /// Noise standard deviation of the primary observations.
    pub fn noise_sigma(&self) -> f64 {
        match self.family {
            Family::TwoSampleS1 | Family::TwoSampleS2 => std::f64::consts::SQRT_2,
            _ => 1.0,
        }
    }

    /// First index of the second block in the split families.
    pub fn block_split(&self) -> usize {
        self.n / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub data: Dataset,
    pub theta: Vec<f64>,
    pub oracle: OracleModel,
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

fn diag(values: &[f64]) -> Vec<f64> {
    let k = values.len();
    let mut m = vec![0.0; k * k];
    for (i, v) in values.iter().enumerate() {
        m[i * k + i] = *v;
    }
    m
}

fn gaussian_component(weight: f64, y_mean: f64, y_var: f64, mean: Vec<f64>, cov: Vec<f64>, cross: Vec<f64>) -> MixtureComponent {
    MixtureComponent { weight, y_mean, y_var, aux: AuxLaw::Gaussian { mean, cov, cross } }
}

/// Oracle model of the family's `(Y, S)` law.
pub fn family_oracle(spec: &SimulationSpec) -> Result<OracleModel> {
    let n = spec.n;
    match spec.family {
        Family::Sim1S1 | Family::Sim1S2 | Family::Sim1S3 => {
            let (s, ss) = (spec.param("sigma"), spec.param("sigma_s"));
            let (vy, vs) = (2.0 + s * s, 1.0 + s * s + ss * ss);
            let comps = [0.0, 1.0].map(|m| gaussian_component(0.5, m, vy, vec![m], vec![vs], vec![1.0]));
            Ok(OracleModel::Shared(OracleMixtureModel::new(comps.to_vec())?))
        }
        Family::Sim1S4 => {
            let p = spec.param("p");
            let comp = |w: f64, m: f64, p1: f64| MixtureComponent {
                weight: w,
                y_mean: m,
                y_var: 1.25,
                aux: AuxLaw::Categorical { pmfs: vec![vec![1.0 - p1, p1]] },
            };
            Ok(OracleModel::Shared(OracleMixtureModel::new(vec![comp(1.0 - p, 0.0, 0.05), comp(p, 2.0, 0.9)])?))
        }
        Family::Sim3S1 | Family::Sim3S2 | Family::Sim3S3 | Family::Sim3S4 => {
            let (s, ss) = (spec.param("sigma"), spec.param("sigma_s"));
            let (vy, vs) = (s * s + 1.0, s * s + ss * ss);
            let cov = diag(&[vs; 4]);
            let block = |means: [[f64; 5]; 2]| -> Result<OracleMixtureModel> {
                OracleMixtureModel::new(
                    means.iter().map(|m| gaussian_component(0.5, m[0], vy, m[1..].to_vec(), cov.clone(), vec![0.0; 4])).collect(),
                )
            };
            match spec.family {
                Family::Sim3S1 | Family::Sim3S2 => Ok(OracleModel::Shared(block([[0.0; 5], [2.0; 5]])?)),
                _ => Ok(OracleModel::Blocks(vec![
                    (0, block([[0.0; 5], [2.0, 2.0, 2.0, 0.0, 0.0]])?),
                    (spec.block_split(), block([[0.0; 5], [0.0, 0.0, 0.0, 2.0, 2.0]])?),
                ])),
            }
        }
        Family::TwoSampleS1 | Family::TwoSampleS2 => {
            let atoms = two_sample_atoms(spec);
            let mut counts: Vec<((f64, f64), usize)> = Vec::new();
            for a in atoms {
                match counts.iter_mut().find(|(b, _)| *b == a) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((a, 1)),
                }
            }
            let comps = counts
                .iter()
                .map(|&((theta, eta), c)| gaussian_component(c as f64 / n as f64, theta, 2.0, vec![eta], vec![2.0], vec![0.0]))
                .collect::<Vec<_>>();
            Ok(OracleModel::Shared(normalized(comps)?))
        }
        Family::BenefitVsK => {
            let k = spec.count("K");
            let comps = [0.0, 2.0].map(|m| gaussian_component(0.5, m, 2.0, vec![m; k], diag(&vec![2.0; k]), vec![0.0; k]));
            Ok(OracleModel::Shared(OracleMixtureModel::new(comps.to_vec())?))
        }
    }
}

/// Renormalizes weights that are ratios of counts, absorbing rounding.
fn normalized(mut comps: Vec<MixtureComponent>) -> Result<OracleMixtureModel> {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    comps.iter_mut().for_each(|c| c.weight /= total);
    let last = comps.len() - 1;
    comps[last].weight = 1.0 - comps[..last].iter().map(|c| c.weight).sum::<f64>();
    OracleMixtureModel::new(comps)
}

/// `(θ_i, η_i)` = (difference, sum) of the two-sample means by index.
fn two_sample_atoms(spec: &SimulationSpec) -> Vec<(f64, f64)> {
    let (n, k) = (spec.n, spec.count("k"));
    let (signal, shared, null) = ((1.5, 3.5), (0.0, 2.0), (0.0, 0.0));
    (0..n)
        .map(|i| match spec.family {
            Family::TwoSampleS1 if i < k => signal,
            Family::TwoSampleS1 if i < 2 * k => shared,
            Family::TwoSampleS2 if i < k => shared,
            Family::TwoSampleS2 if i < n / 2 => signal,
            _ => null,
        })
        .collect()
}

/// Draws one dataset from the family's hierarchical model.
pub fn generate(spec: &SimulationSpec) -> Result<SimulatedDataset> {
    let mut rng = seeding::stream(spec.seed, &[seeding::tag(spec.family.name())]);
    let n = spec.n;
    let mut theta = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let aux = match spec.family {
        Family::Sim1S1 | Family::Sim1S2 | Family::Sim1S3 => {
            let (s, ss) = (spec.param("sigma"), spec.param("sigma_s"));
            let mut col = Vec::with_capacity(n);
            for _ in 0..n {
                let center = if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 };
                let xi = center + normal(&mut rng);
                let t = xi + s * normal(&mut rng);
                let zeta = xi + s * normal(&mut rng);
                theta.push(t);
                y.push(t + normal(&mut rng));
                col.push(zeta + ss * normal(&mut rng));
            }
            AuxData::continuous(n, vec![col])?
        }
        Family::Sim1S4 => {
            let p = spec.param("p");
            let mut col = Vec::with_capacity(n);
            for _ in 0..n {
                let xi = rng.random::<f64>() < p;
                let t = if xi { 2.0 } else { 0.0 } + 0.5 * normal(&mut rng);
                theta.push(t);
                y.push(t + normal(&mut rng));
                let p1 = if xi { 0.9 } else { 0.05 };
                col.push(if rng.random::<f64>() < p1 { 1.0 } else { 0.0 });
            }
            AuxData::from_columns(n, vec![(ColumnKind::Categorical, col)])?
        }
        Family::Sim3S1 | Family::Sim3S2 | Family::Sim3S3 | Family::Sim3S4 => {
            let (s, ss) = (spec.param("sigma"), spec.param("sigma_s"));
            let split = matches!(spec.family, Family::Sim3S3 | Family::Sim3S4);
            let mut values = Vec::with_capacity(4 * n);
            for i in 0..n {
                let eta = if rng.random::<f64>() < 0.5 { 0.0 } else { 2.0 };
                let (eta1, eta2) = if !split {
                    (eta, eta)
                } else if i < spec.block_split() {
                    (eta, 0.0)
                } else {
                    (0.0, eta)
                };
                let t = eta1 + s * normal(&mut rng);
                theta.push(t);
                y.push(t + normal(&mut rng));
                for j in 0..4 {
                    let center = if j < 2 { eta1 } else { eta2 };
                    let tj = center + s * normal(&mut rng);
                    values.push(tj + ss * normal(&mut rng));
                }
            }
            AuxData::from_rows(n, vec![ColumnKind::Continuous; 4], values)?
        }
        Family::TwoSampleS1 | Family::TwoSampleS2 => {
            let mut col = Vec::with_capacity(n);
            for (t, e) in two_sample_atoms(spec) {
                let (mu1, mu2) = (0.5 * (e + t), 0.5 * (e - t));
                let x1 = mu1 + normal(&mut rng);
                let x2 = mu2 + normal(&mut rng);
                theta.push(t);
                y.push(x1 - x2);
                col.push(x1 + x2);
            }
            AuxData::continuous(n, vec![col])?
        }
        Family::BenefitVsK => {
            let k = spec.count("K");
            let mut values = Vec::with_capacity(k * n);
            for _ in 0..n {
                let xi = if rng.random::<f64>() < 0.5 { 0.0 } else { 2.0 };
                let t = xi + normal(&mut rng);
                theta.push(t);
                y.push(t + normal(&mut rng));
                for _ in 0..k {
                    let mu = xi + normal(&mut rng);
                    values.push(mu + normal(&mut rng));
                }
            }
            AuxData::from_rows(n, vec![ColumnKind::Continuous; k], values)?
        }
    };
    Ok(SimulatedDataset { data: Dataset::new(y, aux, spec.noise_sigma())?, theta, oracle: family_oracle(spec)? })
}

/// Sample moments against the oracle's analytic moments, per column
/// (column 0 is `y`).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCheck {
    pub column: usize,
    pub mean: f64,
    pub mean_expected: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_expected: f64,
    pub var_se: f64,
}

impl MomentCheck {
    /// Both moments within `z` standard errors.
    pub fn within(&self, z: f64) -> bool {
        (self.mean - self.mean_expected).abs() <= z * self.mean_se
            && (self.var - self.var_expected).abs() <= z * self.var_se
    }
}

/// Analytic mean and variance of column `j` (0 = `y`) under `model`.
fn mixture_moments(model: &OracleMixtureModel, j: usize) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for c in model.components() {
        let (mean, var) = if j == 0 {
            (c.y_mean, c.y_var)
        } else {
            match &c.aux {
                AuxLaw::Gaussian { mean, cov, .. } => {
                    let k = mean.len();
                    (mean[j - 1], cov[(j - 1) * k + (j - 1)])
                }
                AuxLaw::Categorical { pmfs } => {
                    let p = &pmfs[j - 1];
                    let e: f64 = p.iter().enumerate().map(|(c, q)| c as f64 * q).sum();
                    let e2: f64 = p.iter().enumerate().map(|(c, q)| (c * c) as f64 * q).sum();
                    (e, e2 - e * e)
                }
                AuxLaw::None => unreachable!("column index beyond the auxiliary dimension"),
            }
        };
        m1 += c.weight * mean;
        m2 += c.weight * (var + mean * mean);
    }
    (m1, m2 - m1 * m1)
}

/// Compares sample moments of a generated dataset with the oracle's.
pub fn moment_checks(sim: &SimulatedDataset) -> Vec<MomentCheck> {
    let data = &sim.data;
    let n = data.n();
    let blocks: Vec<(usize, usize, &OracleMixtureModel)> = match &sim.oracle {
        OracleModel::Shared(m) => vec![(0, n, m)],
        OracleModel::Blocks(b) => b
            .iter()
            .enumerate()
            .map(|(t, (start, m))| (*start, b.get(t + 1).map_or(n, |next| next.0), m))
            .collect(),
    };
    (0..=data.k())
        .map(|j| {
            let col = if j == 0 { data.y.clone() } else { data.aux.column(j - 1) };
            // Pool block moments with weights proportional to block sizes.
            let (mut e1, mut e2) = (0.0, 0.0);
            for (start, end, m) in &blocks {
                let w = (end - start) as f64 / n as f64;
                let (mean, var) = mixture_moments(m, j);
                e1 += w * mean;
                e2 += w * (var + mean * mean);
            }
            let nf = n as f64;
            let mean = col.iter().sum::<f64>() / nf;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let m4 = col.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
            MomentCheck {
                column: j,
                mean,
                mean_expected: e1,
                mean_se: (var / nf).sqrt(),
                var,
                var_expected: e2 - e1 * e1,
                var_se: ((m4 - var * var).max(0.0) / nf).sqrt(),
            }
        })
        .collect()
}

/// Estimators compared by the study runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Naive,
    NitDd,
    NitOr,
    Js,
    Ebt,
    /// NIT after averaging the auxiliary columns into one.
    Nit1Dd,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Naive, Method::NitDd, Method::NitOr, Method::Js, Method::Ebt, Method::Nit1Dd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::NitDd => "NIT.DD",
            Method::NitOr => "NIT.OR",
            Method::Js => "JS",
            Method::Ebt => "EBT",
            Method::Nit1Dd => "NIT1.DD",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = NitError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NitError::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// Estimator settings used by the data-driven methods.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudySettings {
    /// The seed field is replaced by a per-replication substream.
    pub mcv: McvConfig,
    pub constraints: ConstraintOptions,
    pub fit: FitOptions,
}

/// Applies `method` to a simulated dataset.
pub fn apply_method(method: Method, sim: &SimulatedDataset, settings: &StudySettings, seed: u64) -> Result<Vec<f64>> {
    let data = &sim.data;
    let mcv = McvConfig { seed, ..settings.mcv.clone() };
    match method {
        Method::Naive => Ok(data.y.clone()),
        Method::NitDd => Ok(estimate(data, &mcv, &settings.constraints, &settings.fit)?.delta),
        Method::NitOr => oracle_nit(&sim.oracle, data),
        Method::Js => james_stein(&data.y, &vec![data.sigma; data.n()]),
        Method::Ebt => tweedie_kde(&data.y, data.sigma, silverman_bandwidth(&data.y)),
        Method::Nit1Dd => {
            let reduced = Dataset::new(data.y.clone(), data.aux.row_means()?, data.sigma)?;
            Ok(estimate(&reduced, &mcv, &settings.constraints, &settings.fit)?.delta)
        }
    }
}

/// Loss of one method on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub spec: usize,
    pub rep: usize,
    pub method: Method,
    pub loss: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    /// Position of the spec in the study.
    pub spec: usize,
    pub family: Family,
    pub n: usize,
    pub params: String,
    pub method: Method,
    pub mse: f64,
    pub std_error: f64,
    /// Replications that produced a loss.
    pub reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub records: Vec<ReplicateRecord>,
}

impl StudyResult {
    pub fn row(&self, spec: usize, method: Method) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.spec == spec && r.method == method)
    }

    /// Losses of `method` on `spec`, by replication.
    pub fn losses(&self, spec: usize, method: Method) -> Vec<Option<f64>> {
        let mut v: Vec<(usize, Option<f64>)> = self
            .records
            .iter()
            .filter(|r| r.spec == spec && r.method == method)
            .map(|r| (r.rep, r.loss.as_ref().ok().copied()))
            .collect();
        v.sort_by_key(|(rep, _)| *rep);
        v.into_iter().map(|(_, l)| l).collect()
    }

    /// Mean and standard error of `loss(a) - loss(b)` over replications
    /// where both succeeded.
    pub fn paired_difference(&self, spec: usize, a: Method, b: Method) -> Option<RiskEstimate> {
        let (la, lb) = (self.losses(spec, a), self.losses(spec, b));
        let diffs: Vec<f64> = la.iter().zip(&lb).filter_map(|(x, y)| Some((*x)? - (*y)?)).collect();
        (!diffs.is_empty()).then(|| RiskEstimate::from_losses(&diffs))
    }
}

/// Substream seed of one replication of one spec.
pub fn replication_seed(master: u64, spec: &SimulationSpec, rep: usize) -> u64 {
    let mut parts = vec![seeding::tag(spec.family.name()), spec.n as u64];
    parts.extend(spec.params().iter().map(|(_, v)| v.to_bits()));
    parts.push(rep as u64);
    seeding::substream_seed(master, &parts)
}

/// Runs every method on `reps` replications of every spec.
pub fn run_study(
    specs: &[SimulationSpec],
    methods: &[Method],
    reps: usize,
    seed: u64,
    settings: &StudySettings,
) -> Result<StudyResult> {
    if reps == 0 {
        return invalid("reps must be at least 1");
    }
    if methods.is_empty() {
        return invalid("no methods requested");
    }
    let tasks: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let per_task: Vec<Vec<ReplicateRecord>> = tasks
        .par_iter()
        .map(|&(s, rep)| {
            let rep_seed = replication_seed(seed, &specs[s], rep);
            let generated = generate(&specs[s].with_seed(rep_seed));
            methods
                .iter()
                .map(|&method| {
                    let loss = match &generated {
                        Ok(sim) => apply_method(method, sim, settings, seeding::substream_seed(rep_seed, &[1]))
                            .map(|d| compound_loss(&d, &sim.theta))
                            .map_err(|e| e.to_string()),
                        Err(e) => Err(format!("generation failed: {e}")),
                    };
                    ReplicateRecord { spec: s, rep, method, loss }
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicateRecord> = per_task.into_iter().flatten().collect();
    let mut rows = Vec::with_capacity(specs.len() * methods.len());
    for (s, spec) in specs.iter().enumerate() {
        for &method in methods {
            let (ok, failed): (Vec<_>, Vec<_>) =
                records.iter().filter(|r| r.spec == s && r.method == method).partition(|r| r.loss.is_ok());
            let losses: Vec<f64> = ok.iter().map(|r| *r.loss.as_ref().unwrap()).collect();
            let (mse, std_error) = if losses.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let est = RiskEstimate::from_losses(&losses);
                (est.mse, est.std_error)
            };
            rows.push(StudyRow {
                spec: s,
                family: spec.family,
                n: spec.n,
                params: spec.param_string(),
                method,
                mse,
                std_error,
                reps: losses.len(),
                failures: failed.len(),
            });
        }
    }
    Ok(StudyResult { rows, records })
}
