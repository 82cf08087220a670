use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentOutput, ExperimentSummary, TrialReport};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const POWER_FILE: &str = "power.csv";

/// A numeric CSV: rows are observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadedCsv {
    pub data: Matrix,
    pub names: Option<Vec<String>>,
}

/// Reads a rectangular numeric CSV. Row numbers in errors are 1-based file
/// lines, header included; columns are 1-based.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, has_header)
}

pub fn read_csv<R: std::io::Read>(reader: R, has_header: bool) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names = None;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if has_header && i == 0 {
            width = Some(rec.len());
            names = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::RaggedRows {
                row,
                expected,
                got: rec.len(),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|e: std::num::ParseFloatError| Error::Parse {
                row,
                column: c + 1,
                message: format!("`{field}`: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("`{field}` is not finite"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(LoadedCsv {
        data: Matrix::from_vec(rows, width.unwrap_or(0), data)?,
        names,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `trials.jsonl`, `timings.jsonl`, `summary.json`, and `power.csv`
/// into `dir`, creating it if needed.
pub fn emit_results(outputs: &[ExperimentOutput], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(TRIALS_FILE);
    let mut w = create(&path)?;
    for r in outputs.iter().flat_map(|o| &o.reports) {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(TIMINGS_FILE);
    let mut w = create(&path)?;
    for o in outputs {
        for r in &o.reports {
            let line = serde_json::json!({
                "method": o.summary.method,
                "n": r.n,
                "d": r.d,
                "trial": r.trial,
                "optimize_secs": r.timing.optimize_secs,
                "test_secs": r.timing.test_secs,
            });
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let summaries: Vec<&ExperimentSummary> = outputs.iter().map(|o| &o.summary).collect();
    let path = dir.join(SUMMARY_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &summaries)?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(POWER_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(["n", "d", "method", "problem", "rejection_rate", "stderr", "trials"])
        .map_err(|e| csv_io(&path, e))?;
    for s in summaries.iter().filter(|s| s.completed > 0) {
        w.write_record([
            s.n.to_string(),
            s.d.to_string(),
            s.method.to_string(),
            s.problem.clone(),
            s.proportion.to_string(),
            s.stderr.to_string(),
            s.completed.to_string(),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Reads back a JSON-lines trial file.
pub fn reload_trials(path: impl AsRef<Path>) -> Result<Vec<TrialReport>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn reload_summaries(path: impl AsRef<Path>) -> Result<Vec<ExperimentSummary>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}
