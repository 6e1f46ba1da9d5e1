//! File formats.
//!
//! * Dataset: CSV with header `setting,value`, one row per sample, rows
//!   grouped by setting in schedule order.
//! * Metadata sidecar `<stem>.meta.json`: sample count, efficiency, seed,
//!   schedule tokens and provenance.
//! * Reconstruction result: JSON with row-major 4×4 matrices and a
//!   `diagnostics` block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::StateDiagnostics;
use crate::measurement::{Dataset, HomodyneConfig, Provenance, QuadratureRecord};
use crate::reconstruction::{DiagnosticsReport, ReconstructionOptions, ReconstructionResult};
use crate::{Error, Mat4, Result, Setting, Vec4};

pub const CSV_HEADER: [&str; 2] = ["setting", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub samples_per_quadrature: usize,
    pub efficiency: f64,
    pub seed: u64,
    pub schedule: Vec<String>,
    pub provenance: Provenance,
}

impl DatasetMeta {
    pub fn from_dataset(d: &Dataset) -> Self {
        let c = d.config();
        Self {
            samples_per_quadrature: c.samples_per_quadrature,
            efficiency: c.efficiency,
            seed: c.seed,
            schedule: d.schedule().iter().map(|s| s.to_string()).collect(),
            provenance: d.provenance().clone(),
        }
    }
}

/// `run1.csv` → `run1.meta.json`.
pub fn meta_path_for(csv_path: &Path) -> PathBuf {
    if csv_path.extension().is_some_and(|e| e == "csv") {
        csv_path.with_extension("meta.json")
    } else {
        let mut s = csv_path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }
}

pub fn write_dataset_csv(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(CSV_HEADER)?;
    for r in d.records() {
        let token = r.setting.to_string();
        for x in &r.samples {
            w.write_record([token.as_str(), x.to_string().as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `<csv_path>` and its metadata sidecar; returns the sidecar path.
pub fn write_dataset(d: &Dataset, csv_path: &Path) -> Result<PathBuf> {
    write_dataset_csv(d, csv_path)?;
    let meta_path = meta_path_for(csv_path);
    write_json(&meta_path, &DatasetMeta::from_dataset(d))?;
    Ok(meta_path)
}

/// Reads `setting,value` rows, grouped by setting in order of first appearance.
pub fn read_records(path: &Path) -> Result<Vec<QuadratureRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::InvalidDataset(format!(
            "expected header `setting,value`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records: Vec<QuadratureRecord> = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::InvalidDataset(format!(
                "row {} has {} fields, expected 2",
                line + 2,
                row.len()
            )));
        }
        let setting: Setting = row[0].parse()?;
        let value: f64 = row[1].parse().map_err(|_| {
            Error::InvalidDataset(format!("row {}: `{}` is not a number", line + 2, &row[1]))
        })?;
        match records.iter_mut().find(|r| r.setting == setting) {
            Some(r) => r.samples.push(value),
            None => records.push(QuadratureRecord {
                setting,
                samples: vec![value],
            }),
        }
    }
    Ok(records)
}

/// Loads a dataset. Metadata comes from `meta_path`, else from the default
/// sidecar when it exists; without metadata the data is treated as external
/// with unit efficiency, and all settings must have the same sample count.
pub fn read_dataset(csv_path: &Path, meta_path: Option<&Path>) -> Result<Dataset> {
    let records = read_records(csv_path)?;
    let default_meta = meta_path_for(csv_path);
    let meta_path = match meta_path {
        Some(p) => Some(p.to_path_buf()),
        None => default_meta.exists().then_some(default_meta),
    };
    match meta_path {
        Some(p) => {
            let meta: DatasetMeta = read_json(&p)?;
            let mut in_csv: Vec<String> = records.iter().map(|r| r.setting.to_string()).collect();
            let mut in_meta = meta.schedule.clone();
            in_csv.sort();
            in_meta.sort();
            if in_csv != in_meta {
                return Err(Error::InvalidDataset(format!(
                    "metadata schedule [{}] does not match the CSV settings [{}]",
                    meta.schedule.join(","),
                    in_csv.join(",")
                )));
            }
            let config = HomodyneConfig::new(meta.samples_per_quadrature, meta.efficiency, meta.seed)?;
            Dataset::new(records, config, meta.provenance)
        }
        None => {
            let n = records.first().map_or(0, |r| r.samples.len());
            if let Some(r) = records.iter().find(|r| r.samples.len() != n) {
                return Err(Error::InvalidDataset(format!(
                    "setting `{}` has {} samples but `{}` has {n}; external datasets need equal counts",
                    r.setting,
                    r.samples.len(),
                    records[0].setting
                )));
            }
            let settings: Vec<Setting> = records.iter().map(|r| r.setting).collect();
            crate::measurement::validate_schedule(&settings)?;
            let config = HomodyneConfig::new(n, 1.0, 0)?;
            Dataset::new(records, config, Provenance::External)
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub type Rows = [[f64; 4]; 4];

pub fn rows(m: &Mat4) -> Rows {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

pub fn from_rows(r: &Rows) -> Mat4 {
    Mat4::from_fn(|i, j| r[i][j])
}

fn vec4(v: &Vec4) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapFile {
    pub resamples: usize,
    pub stderr: Rows,
    pub lower: Rows,
    pub upper: Rows,
}

/// Reconstruction result as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultFile {
    #[serde(rename = "M")]
    pub mean_matrix: Rows,
    #[serde(rename = "V")]
    pub variance_matrix: Rows,
    pub sigma: Rows,
    pub stderr: Rows,
    pub min_symplectic_eig: Option<f64>,
    pub min_symplectic_eig_stderr: f64,
    pub physical: bool,
    pub strictly_physical: bool,
    pub mean: [f64; 4],
    pub mean_stderr: [f64; 4],
    pub efficiency: f64,
    pub options: ReconstructionOptions,
    pub degenerate_settings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected_sigma: Option<Rows>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapFile>,
    pub diagnostics: Option<DiagnosticsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected_diagnostics: Option<StateDiagnostics>,
}

impl From<&ReconstructionResult> for ResultFile {
    fn from(r: &ReconstructionResult) -> Self {
        Self {
            mean_matrix: rows(&r.mean_matrix),
            variance_matrix: rows(&r.variance_matrix),
            sigma: rows(&r.covariance),
            stderr: rows(&r.stderr),
            min_symplectic_eig: r.min_symplectic_eig,
            min_symplectic_eig_stderr: r.min_symplectic_eig_stderr,
            physical: r.physical,
            strictly_physical: r.strictly_physical,
            mean: vec4(&r.mean),
            mean_stderr: vec4(&r.mean_stderr),
            efficiency: r.efficiency,
            options: r.options,
            degenerate_settings: r.degenerate_settings.iter().map(|s| s.to_string()).collect(),
            projected_sigma: r.projected.as_ref().map(rows),
            bootstrap: r.bootstrap.as_ref().map(|b| BootstrapFile {
                resamples: b.resamples,
                stderr: rows(&b.stderr),
                lower: rows(&b.lower),
                upper: rows(&b.upper),
            }),
            diagnostics: r.diagnostics,
            projected_diagnostics: r.projected_diagnostics,
        }
    }
}

/// Pulls a covariance matrix out of a JSON document: a state file (`cov`)
/// or a reconstruction result (`sigma`).
pub fn covariance_from_json(value: &serde_json::Value) -> Result<Mat4> {
    let field = value
        .get("sigma")
        .or_else(|| value.get("cov"))
        .ok_or_else(|| Error::InvalidDataset("expected a `sigma` or `cov` field".into()))?;
    let r: Rows = serde_json::from_value(field.clone())?;
    Ok(from_rows(&r))
}
