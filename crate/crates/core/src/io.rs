//! CSV and JSON artifacts.
//!
//! Matrices are written with a header row of feature names, an empty field
//! for every missing cell and 17 significant digits, so values survive a
//! round trip bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputer::StopReason;
use crate::matrix::DataMatrix;

/// Formats a float so that parsing it back yields the same bits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn default_header(f: usize) -> Vec<String> {
    (0..f).map(|j| format!("f{j}")).collect()
}

pub fn write_matrix(path: &Path, x: &DataMatrix, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    match header {
        Some(h) if h.len() == x.n_cols() => w.write_record(h)?,
        Some(h) => {
            return Err(Error::ShapeMismatch { expected: format!("{} names", x.n_cols()), got: h.len().to_string() })
        }
        None => w.write_record(default_header(x.n_cols()))?,
    }
    for i in 0..x.n_rows() {
        let rec: Vec<String> = x
            .row(i)
            .iter()
            .zip(x.row_mask(i))
            .map(|(&v, &m)| if m && v.is_nan() { String::new() } else { format_value(v) })
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the mask as 0/1 cells (1 = missing).
pub fn write_mask(path: &Path, x: &DataMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(default_header(x.n_cols()))?;
    for i in 0..x.n_rows() {
        w.write_record(x.row_mask(i).iter().map(|&m| if m { "1" } else { "0" }))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a matrix; empty fields become missing cells. Returns the header too.
pub fn read_matrix(path: &Path) -> Result<(DataMatrix, Vec<String>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let f = header.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != f {
            return Err(Error::Malformed(format!("row {} has {} fields, header has {f}", line + 1, rec.len())));
        }
        for field in rec.iter() {
            let field = field.trim();
            if field.is_empty() {
                values.push(f64::NAN);
            } else {
                let v: f64 =
                    field.parse().map_err(|_| Error::Malformed(format!("row {}: cannot parse {field:?}", line + 1)))?;
                if !v.is_finite() {
                    return Err(Error::Malformed(format!("row {}: non-finite value {field:?}", line + 1)));
                }
                values.push(v);
            }
        }
        n += 1;
    }
    Ok((DataMatrix::from_nan(n, f, values)?, header))
}

/// One 0/1 label per row, single column with a header.
pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("").trim();
        let y: f64 = field.parse().map_err(|_| Error::Malformed(format!("label row {}: {field:?}", line + 1)))?;
        match y {
            0.0 => out.push(0),
            1.0 => out.push(1),
            _ => return Err(Error::Malformed(format!("label row {} is not 0 or 1", line + 1))),
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label"])?;
    for y in labels {
        w.write_record([y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Provenance of a command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub duration_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_owned(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            duration_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Flat metrics object. Absent metrics are omitted; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_miss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_miss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    /// File name of the manifest that produced these metrics.
    pub manifest: String,
}

/// JSON schema of `metrics.json`.
pub const METRICS_SCHEMA: &str = include_str!("../schema/metrics.schema.json");
