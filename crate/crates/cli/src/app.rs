//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nit_core::estimator::{
    estimate, BoxBound, ConstraintOptions, FitOptions, GridSpec, McvConfig, DEFAULT_ALPHA, DEFAULT_REPLICATES,
};
use nit_core::score_qp::SolverSettings;
use nit_core::sim::{run_study, Family, Method, SimulationSpec, StudySettings};

use crate::checks;
use crate::io::{self, ConstraintFlags, RunInfo, Schema};

#[derive(Debug, Parser)]
#[command(name = "nit", version, about = "Integrative Tweedie estimation of normal means with auxiliary data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the means of one CSV dataset.
    Estimate(EstimateArgs),
    /// Run a seeded simulation study and write its risk table.
    Simulate(SimulateArgs),
    /// Check a family's generator moments and oracle scores.
    OracleCheck(OracleCheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct McvArgs {
    /// Noise-split ratio of the cross-validation.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Bandwidth grid: `auto` or log-spaced `lo:hi:count`.
    #[arg(long, default_value = "auto", value_parser = parse_grid)]
    pub grid: GridSpec,
    /// Noise-split replicates averaged per bandwidth.
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    pub replicates: usize,
    /// Drop the zero-sum constraint on the score.
    #[arg(long)]
    pub no_zero_sum: bool,
    /// Bound on |h_i|: `off`, `scaled`, or a constant.
    #[arg(long = "box", default_value = "off", value_parser = parse_box)]
    pub box_bound: BoxBound,
    /// Require the estimate to be nondecreasing in y (no auxiliaries only).
    #[arg(long)]
    pub monotone: bool,
    /// Ridge added to the kernel matrix, in units of n^-2.
    #[arg(long)]
    pub ridge: Option<f64>,
}

impl McvArgs {
    fn constraints(&self) -> ConstraintOptions {
        ConstraintOptions { zero_sum: !self.no_zero_sum, box_bound: self.box_bound.clone(), monotone: self.monotone }
    }

    fn fit_options(&self) -> FitOptions {
        let mut opts = FitOptions::default();
        if let Some(r) = self.ridge {
            opts.solver = SolverSettings { ridge: r, ..opts.solver };
        }
        opts
    }

    fn mcv(&self, seed: u64) -> McvConfig {
        McvConfig { alpha: self.alpha, grid: self.grid.clone(), replicates: self.replicates, seed }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub y_col: String,
    /// Comma-separated auxiliary columns.
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub aux_cols: Vec<String>,
    /// Comma-separated auxiliary columns holding category labels.
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub cat_cols: Vec<String>,
    /// Known noise standard deviation of y.
    #[arg(long)]
    pub sigma: f64,
    #[command(flatten)]
    pub mcv: McvArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    /// Sample sizes, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    /// Family parameter override `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_value = "naive,NIT.DD,NIT.OR,JS,EBT", value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub mcv: McvArgs,
    /// Output CSV; per-replication losses go to `<out>.replicates.csv`.
    /// The summary is written to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    /// Sample size of the moment checks.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long = "param", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// Records used for the finite-difference checks.
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Moment tolerance in standard errors.
    #[arg(long, default_value_t = 3.0)]
    pub z: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(GridSpec::Auto);
    }
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else {
        return Err(format!("expected `auto` or `lo:hi:count`, got '{s}'"));
    };
    let num = |v: &str| io::parse_number(v).ok_or_else(|| format!("'{v}' is not a number"));
    let (lo, hi) = (num(lo)?, num(hi)?);
    let count: usize = count.parse().map_err(|_| format!("'{count}' is not a count"))?;
    nit_core::estimator::log_grid(lo, hi, count).map_err(|e| e.to_string())?;
    Ok(GridSpec::LogRange { lo, hi, count })
}

fn parse_box(s: &str) -> Result<BoxBound, String> {
    match s {
        "off" => Ok(BoxBound::Off),
        "scaled" => Ok(BoxBound::Scaled),
        _ => match io::parse_number(s) {
            Some(c) if c >= 0.0 => Ok(BoxBound::Uniform(c)),
            _ => Err(format!("expected `off`, `scaled` or a nonnegative number, got '{s}'")),
        },
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v = io::parse_number(v.trim()).ok_or_else(|| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Family::ALL.iter().map(|f| f.name()).collect();
        format!("unknown family '{s}' (known: {})", names.join(", "))
    })
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method '{s}' (known: {})", names.join(", "))
    })
}

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Failure {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::Simulate(args) => run_simulate(args),
        Command::OracleCheck(args) => run_oracle_check(args),
    }
}

fn non_empty(list: Vec<String>) -> Vec<String> {
    list.into_iter().filter(|s| !s.is_empty()).collect()
}

fn run_estimate(args: EstimateArgs) -> Result<(), Failure> {
    if !(args.sigma > 0.0 && args.sigma.is_finite()) {
        return Err(Failure::Usage(format!("--sigma must be positive, got {}", args.sigma)));
    }
    let schema = Schema {
        y_col: args.y_col.clone(),
        aux_cols: non_empty(args.aux_cols),
        cat_cols: non_empty(args.cat_cols),
        sigma: args.sigma,
    };
    let loaded = io::read_dataset(&args.data, &schema).map_err(Failure::runtime)?;
    for r in &loaded.rejected {
        eprintln!("warning: line {} dropped: missing value in column '{}'", r.line, r.column);
    }
    let data = &loaded.dataset;
    let cfg = args.mcv.mcv(args.seed);
    let result =
        estimate(data, &cfg, &args.mcv.constraints(), &args.mcv.fit_options()).map_err(Failure::runtime)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for (lambda, e) in &result.failures {
        eprintln!("warning: bandwidth {lambda:.6e} skipped: {e}");
    }
    let run = RunInfo {
        sigma: args.sigma,
        alpha: cfg.alpha,
        replicates: cfg.replicates,
        seed: args.seed,
        grid_spec: match &cfg.grid {
            GridSpec::Auto => "auto".to_string(),
            GridSpec::LogRange { lo, hi, count } => format!("{lo}:{hi}:{count}"),
            GridSpec::Explicit(g) => format!("{g:?}"),
        },
        constraints: ConstraintFlags {
            zero_sum: !args.mcv.no_zero_sum,
            box_bound: match &args.mcv.box_bound {
                BoxBound::Off => "off".to_string(),
                BoxBound::Scaled => "scaled".to_string(),
                BoxBound::Uniform(c) => io::format_float(*c),
                BoxBound::PerIndex(_) => "per-index".to_string(),
            },
            monotone: args.mcv.monotone,
        },
        dictionaries: loaded.dictionaries.clone(),
    };
    io::write_estimates(&args.out, &result, data, &run).map_err(Failure::runtime)?;
    eprintln!(
        "n = {}, K = {}, lambda_hat = {:.6e}, wrote {}",
        data.n(),
        data.k(),
        result.lambda_hat,
        args.out.display()
    );
    Ok(())
}

fn specs_from(family: Family, ns: &[usize], params: &[(String, f64)], seed: u64) -> Result<Vec<SimulationSpec>, Failure> {
    let overrides: Vec<(&str, f64)> = params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    ns.iter()
        .map(|&n| SimulationSpec::new(family, n, &overrides, seed).map_err(|e| Failure::Usage(e.to_string())))
        .collect()
}

fn run_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let specs = specs_from(args.family, &args.n, &args.params, args.seed)?;
    if args.reps == 0 {
        return Err(Failure::Usage("--reps must be at least 1".into()));
    }
    let settings = StudySettings {
        mcv: args.mcv.mcv(0),
        constraints: args.mcv.constraints(),
        fit: args.mcv.fit_options(),
    };
    let study = run_study(&specs, &args.methods, args.reps, args.seed, &settings).map_err(Failure::runtime)?;
    for r in study.records.iter().filter(|r| r.loss.is_err()) {
        eprintln!(
            "warning: spec {} rep {} {}: {}",
            r.spec,
            r.rep,
            r.method,
            r.loss.as_ref().unwrap_err()
        );
    }
    match &args.out {
        Some(path) => {
            io::write_study(path, &study).map_err(Failure::runtime)?;
            eprintln!("wrote {} and {}", path.display(), io::replicates_path(path).display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            io::write_study_summary(&mut lock, &study).map_err(Failure::runtime)?;
            lock.flush().map_err(Failure::runtime)?;
        }
    }
    Ok(())
}

fn run_oracle_check(args: OracleCheckArgs) -> Result<(), Failure> {
    let spec = specs_from(args.family, &[args.n], &args.params, args.seed)?.remove(0);
    let report = checks::oracle_check(&spec, args.points, args.z).map_err(Failure::runtime)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    report.write_csv(&mut lock).map_err(Failure::runtime)?;
    lock.flush().map_err(Failure::runtime)?;
    let failed = report.failed();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} checks failed", report.lines.len())));
    }
    eprintln!("all {} checks passed", report.lines.len());
    Ok(())
}
