use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{compute_metrics, EstimateRecord, Manifest, Metrics, RunReport, SocPoint};

pub const ESTIMATES_CSV: &str = "estimates.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const SOC_SERIES_CSV: &str = "soc_series.csv";
pub const TIMING_JSON: &str = "timing.json";

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Write estimates, metrics, manifest and (with batteries) the SoC error
/// series. All but `timing.json` are byte-stable for identical inputs.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_estimates(&dir.join(ESTIMATES_CSV), &report.records)?;
    fs::write(dir.join(METRICS_JSON), to_json(&report.metrics)?)?;
    fs::write(dir.join(MANIFEST_JSON), to_json(&report.manifest)?)?;
    if !report.soc_series.is_empty() {
        write_csv::<SocPoint>(&dir.join(SOC_SERIES_CSV), &report.soc_series)?;
    }
    fs::write(dir.join(TIMING_JSON), to_json(&report.timing)?)?;
    Ok(())
}

pub fn write_estimates(path: &Path, records: &[EstimateRecord]) -> Result<()> {
    write_csv(path, records)
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Recompute metrics from the estimates and manifest stored in `dir`.
pub fn recompute_metrics(dir: &Path) -> Result<Metrics> {
    let records = read_estimates(&dir.join(ESTIMATES_CSV))?;
    let manifest = read_manifest(&dir.join(MANIFEST_JSON))?;
    Ok(compute_metrics(&records, &manifest))
}
