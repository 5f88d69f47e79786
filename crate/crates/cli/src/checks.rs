//! Generator moment checks and oracle finite-difference checks.

use std::io::Write;

use nit_core::oracle::oracle_score;
use nit_core::sim::{generate, moment_checks, SimulationSpec};

use crate::io::format_float;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub check: String,
    pub index: usize,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn pass(&self) -> bool {
        (self.value - self.expected).abs() <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub lines: Vec<CheckLine>,
}

impl Report {
    pub fn failed(&self) -> usize {
        self.lines.iter().filter(|l| !l.pass()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "index", "value", "expected", "tolerance", "pass"])?;
        for l in &self.lines {
            w.write_record([
                l.check.clone(),
                l.index.to_string(),
                format_float(l.value),
                format_float(l.expected),
                format_float(l.tolerance),
                l.pass().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Moments of every column within `z` standard errors, and the oracle score
/// against a central difference of the log density at `points` records.
pub fn oracle_check(spec: &SimulationSpec, points: usize, z: f64) -> nit_core::Result<Report> {
    let sim = generate(spec)?;
    let mut lines = Vec::new();
    for m in moment_checks(&sim) {
        lines.push(CheckLine {
            check: "mean".into(),
            index: m.column,
            value: m.mean,
            expected: m.mean_expected,
            tolerance: z * m.mean_se,
        });
        lines.push(CheckLine {
            check: "variance".into(),
            index: m.column,
            value: m.var,
            expected: m.var_expected,
            tolerance: z * m.var_se,
        });
    }
    let n = sim.data.n();
    let points = points.min(n);
    for t in 0..points {
        let i = t * n / points;
        let model = sim.oracle.model_for(i);
        let (y, s) = (sim.data.y[i], sim.data.aux.row(i));
        let score = oracle_score(model, y, s)?;
        let fd = (model.log_density(y + FD_STEP, s) - model.log_density(y - FD_STEP, s)) / (2.0 * FD_STEP);
        lines.push(CheckLine {
            check: "score_fd".into(),
            index: i,
            value: score,
            expected: fd,
            tolerance: FD_TOL * (1.0 + fd.abs()),
        });
    }
    Ok(Report { lines })
}
