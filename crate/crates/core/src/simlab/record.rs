//! One CSV row per (repetition, λ) and the atomic CSV writer.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the CSV output.
pub const CSV_COLUMNS: [&str; 12] = [
    "seed",
    "rep_index",
    "n",
    "p",
    "gamma",
    "lambda",
    "R",
    "R_hat",
    "alpha_sq",
    "trace_v",
    "wall_time_ms",
    "variant",
];

/// A failed fit is recorded with NaN in every fitted column. A
/// degenerate trace gives `R_hat = inf`. `alpha_sq` is empty unless requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub rep_index: usize,
    pub n: usize,
    pub p: usize,
    pub gamma: f64,
    pub lambda: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "R_hat")]
    pub r_hat: f64,
    pub alpha_sq: Option<f64>,
    pub trace_v: f64,
    pub wall_time_ms: f64,
    /// Scenario label inside a multi-scenario experiment, such as `sigma=2`.
    pub variant: String,
}

impl ExperimentRecord {
    /// `|R̂/R − 1|`, NaN when undefined.
    pub fn relative_error(&self) -> f64 {
        if self.r > 0.0 && self.r.is_finite() && self.r_hat.is_finite() {
            (self.r_hat / self.r - 1.0).abs()
        } else {
            f64::NAN
        }
    }
}

pub fn write_csv<W: Write>(writer: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn write_csv_atomic(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_csv(tmp.as_file_mut(), records)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let expected: Vec<&str> = CSV_COLUMNS.to_vec();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Config(format!(
            "unexpected CSV header in {}: {:?}",
            path.display(),
            headers
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
