//! CSV and JSON file formats for datasets, estimates and study tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nit_core::estimator::EstimateResult;
use nit_core::sim::StudyResult;
use nit_core::{AuxData, ColumnKind, Dataset};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Model(#[from] nit_core::NitError),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Which columns of a CSV file make up a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub y_col: String,
    /// Auxiliary columns in model order.
    pub aux_cols: Vec<String>,
    /// Subset of `aux_cols` holding category labels.
    pub cat_cols: Vec<String>,
    pub sigma: f64,
}

/// Label dictionary of one categorical column; code `c` is `labels[c]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dictionary {
    pub column: String,
    pub labels: Vec<String>,
}

/// A record dropped for a missing value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line number in the file, the header being line 1.
    pub line: u64,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub dictionaries: Vec<Dictionary>,
    pub rejected: Vec<RejectedRow>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// Parses a decimal number with `.` as the decimal point. Non-finite values
/// and digit grouping are rejected.
pub fn parse_number(cell: &str) -> Option<f64> {
    let ok_chars = cell.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
    if !ok_chars || !cell.bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads the columns named by `schema` from a headed CSV file.
pub fn read_dataset(path: &Path, schema: &Schema) -> Result<LoadedDataset> {
    let fmt_err = |msg: String| IoError::Format { path: path.to_path_buf(), msg };
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(|source| IoError::Open { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();

    for cat in &schema.cat_cols {
        if !schema.aux_cols.contains(cat) {
            return Err(fmt_err(format!("categorical column '{cat}' is not listed among the auxiliary columns")));
        }
    }
    let mut selected = vec![schema.y_col.clone()];
    selected.extend(schema.aux_cols.iter().cloned());
    let mut index = Vec::with_capacity(selected.len());
    for (pos, name) in selected.iter().enumerate() {
        if selected[..pos].contains(name) {
            return Err(fmt_err(format!("column '{name}' is selected more than once")));
        }
        let hits: Vec<usize> = header.iter().enumerate().filter(|(_, h)| *h == name).map(|(i, _)| i).collect();
        match hits.as_slice() {
            [i] => index.push(*i),
            [] => return Err(fmt_err(format!("unknown column '{name}' (header: {})", header.join(", ")))),
            _ => return Err(fmt_err(format!("header names column '{name}' more than once"))),
        }
    }
    let categorical: Vec<bool> = selected.iter().map(|c| schema.cat_cols.contains(c)).collect();

    let mut labels: Vec<Vec<String>> = vec![Vec::new(); selected.len()];
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); selected.len()];
    let mut rejected = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let cells: Vec<&str> = index.iter().map(|&i| record.get(i).unwrap_or("")).collect();
        if let Some(j) = cells.iter().position(|c| is_missing(c)) {
            rejected.push(RejectedRow { line, column: selected[j].clone() });
            continue;
        }
        for (j, cell) in cells.iter().enumerate() {
            let value = if categorical[j] {
                let dict = &mut labels[j];
                match dict.iter().position(|l| l == cell) {
                    Some(code) => code as f64,
                    None => {
                        dict.push(cell.to_string());
                        (dict.len() - 1) as f64
                    }
                }
            } else {
                parse_number(cell).ok_or_else(|| {
                    fmt_err(format!("line {line}: column '{}' is continuous but holds '{cell}'", selected[j]))
                })?
            };
            columns[j].push(value);
        }
    }
    let n = columns[0].len();
    if n < 2 {
        return Err(fmt_err(format!("{n} usable rows; at least 2 are required")));
    }
    let mut columns = columns.into_iter();
    let y = columns.next().unwrap();
    let aux_columns = columns
        .zip(&categorical[1..])
        .map(|(col, &cat)| (if cat { ColumnKind::Categorical } else { ColumnKind::Continuous }, col))
        .collect();
    let dataset = Dataset::new(y, AuxData::from_columns(n, aux_columns)?, schema.sigma)?;
    let dictionaries = selected
        .iter()
        .zip(labels)
        .zip(&categorical)
        .filter(|(_, &cat)| cat)
        .map(|((column, labels), _)| Dictionary { column: column.clone(), labels })
        .collect();
    Ok(LoadedDataset { dataset, dictionaries, rejected })
}

/// Decimal form with 17 significant digits, which round-trips every `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Path of the metadata sidecar of an estimate file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Path of the per-replication table of a study file.
pub fn replicates_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".replicates.csv");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintFlags {
    pub zero_sum: bool,
    pub box_bound: String,
    pub monotone: bool,
}

/// Run settings recorded next to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunInfo {
    pub sigma: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub grid_spec: String,
    pub constraints: ConstraintFlags,
    pub dictionaries: Vec<Dictionary>,
}

#[derive(Serialize)]
struct LossPoint {
    lambda: String,
    loss: Option<String>,
    error: Option<String>,
}

#[derive(Serialize)]
struct EstimateMeta<'a> {
    n: usize,
    k: usize,
    lambda_hat: String,
    #[serde(flatten)]
    run: &'a RunInfo,
    grid: Vec<String>,
    loss_curve: Vec<LossPoint>,
    objective: String,
    kkt_residual: String,
    warnings: &'a [String],
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

/// Writes `index,y,delta,score_h` to `path` and the run metadata to
/// [`meta_path`]`(path)`.
pub fn write_estimates(path: &Path, result: &EstimateResult, data: &Dataset, run: &RunInfo) -> Result<()> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["index", "y", "delta", "score_h"]).map_err(csv_err)?;
    for i in 0..data.n() {
        w.write_record([
            i.to_string(),
            format_float(data.y[i]),
            format_float(result.delta[i]),
            format_float(result.score.h[i]),
        ])
        .map_err(csv_err)?;
    }
    let inner = w.into_inner().map_err(|e| IoError::Write { path: path.to_path_buf(), source: e.into_error() })?;
    finish(inner, path)?;

    let loss_curve = result
        .grid
        .iter()
        .map(|&lambda| {
            let loss = result.loss_curve.iter().find(|(l, _)| *l == lambda).map(|(_, v)| format_float(*v));
            let error = result.failures.iter().find(|(l, _)| *l == lambda).map(|(_, e)| e.clone());
            LossPoint { lambda: format_float(lambda), loss, error }
        })
        .collect();
    let meta = EstimateMeta {
        n: data.n(),
        k: data.k(),
        lambda_hat: format_float(result.lambda_hat),
        run,
        grid: result.grid.iter().map(|v| format_float(*v)).collect(),
        loss_curve,
        objective: format_float(result.score.objective),
        kkt_residual: format_float(result.score.kkt_residual),
        warnings: &result.warnings,
    };
    let mpath = meta_path(path);
    let mut mw = create(&mpath)?;
    serde_json::to_writer_pretty(&mut mw, &meta)
        .map_err(|e| IoError::Write { path: mpath.clone(), source: e.into() })?;
    mw.write_all(b"\n").map_err(|source| IoError::Write { path: mpath.clone(), source })?;
    finish(mw, &mpath)
}

/// Writes the aggregated study table as CSV.
pub fn write_study_summary<W: Write>(out: W, study: &StudyResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "n", "params", "method", "mse", "std_error", "reps", "failures"])?;
    for r in &study.rows {
        w.write_record([
            r.family.name().to_string(),
            r.n.to_string(),
            r.params.clone(),
            r.method.name().to_string(),
            format_float(r.mse),
            format_float(r.std_error),
            r.reps.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one line per (spec, replication, method) with its loss or the
/// reason it is missing.
pub fn write_study_replicates<W: Write>(out: W, study: &StudyResult) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["family", "n", "params", "rep", "method", "loss", "error"])?;
    let mut records: Vec<_> = study.records.iter().collect();
    records.sort_by_key(|r| (r.spec, r.rep, r.method));
    for rec in records {
        let row = study.row(rec.spec, rec.method).expect("every record has a summary row");
        let (loss, error) = match &rec.loss {
            Ok(l) => (format_float(*l), String::new()),
            Err(e) => (String::new(), e.clone()),
        };
        w.write_record([
            row.family.name().to_string(),
            row.n.to_string(),
            row.params.clone(),
            rec.rep.to_string(),
            rec.method.name().to_string(),
            loss,
            error,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the study table to `path` and the replication table next to it.
pub fn write_study(path: &Path, study: &StudyResult) -> Result<()> {
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| IoError::Csv { path: p, source }
    };
    let mut w = create(path)?;
    write_study_summary(&mut w, study).map_err(csv_err(path))?;
    finish(w, path)?;
    let rpath = replicates_path(path);
    let mut w = create(&rpath)?;
    write_study_replicates(&mut w, study).map_err(csv_err(&rpath))?;
    finish(w, &rpath)
}
