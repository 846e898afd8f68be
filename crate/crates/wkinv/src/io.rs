//! File formats: sample CSV with a JSON metadata sidecar, CF and CDF
//! tables, risk reports and run manifests. Floats are written in their
//! shortest round-trip form so files are lossless and byte-deterministic.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wkinv_core::{CdfEstimate, CfEstimate, WorkloadSample};

use crate::config::ModelSpec;
use crate::error::{AppError, Result};

/// Metadata written next to a sample CSV as `<stem>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub lambda: f64,
    pub xi: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
}

pub fn sidecar_path(sample_csv: &Path) -> PathBuf {
    let stem = sample_csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    sample_csv.with_file_name(format!("{stem}.meta.json"))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |source| AppError::Csv { path: path.to_path_buf(), source }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e)),
        _ => Ok(()),
    }
}

/// Writes a CSV table whose rows are already formatted.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|source| AppError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Writes `index,t,V` (`t` empty when probe times are unknown) and the sidecar.
pub fn write_sample(path: &Path, sample: &WorkloadSample, meta: &SampleMeta) -> Result<()> {
    let times = sample.times();
    let rows = sample.observations().iter().enumerate().map(|(j, v)| {
        let t = times.map(|t| t[j].to_string()).unwrap_or_default();
        vec![j.to_string(), t, v.to_string()]
    });
    write_table(path, &["index", "t", "V"], rows)?;
    write_json(&sidecar_path(path), meta)
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    #[allow(dead_code)]
    index: usize,
    t: Option<f64>,
    #[serde(rename = "V")]
    v: f64,
}

/// Raw columns of a sample CSV plus its sidecar, if present.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub observations: Vec<f64>,
    pub times: Option<Vec<f64>>,
    pub meta: Option<SampleMeta>,
}

pub fn read_sample(path: &Path) -> Result<SampleFile> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut observations = Vec::new();
    let mut times = Vec::new();
    let mut all_times = true;
    for row in r.deserialize::<SampleRow>() {
        let row = row.map_err(csv_err(path))?;
        observations.push(row.v);
        match row.t {
            Some(t) => times.push(t),
            None => all_times = false,
        }
    }
    let side = sidecar_path(path);
    let meta = if side.exists() { Some(crate::config::read_json(&side)?) } else { None };
    Ok(SampleFile { observations, times: (all_times && !times.is_empty()).then_some(times), meta })
}

impl SampleFile {
    pub fn into_sample(self, lambda: f64, xi: f64) -> Result<WorkloadSample> {
        let sample = WorkloadSample::from_observations(self.observations, lambda, xi)?;
        Ok(match self.times {
            Some(t) => sample.with_times(t)?,
            None => sample,
        })
    }
}

/// `s,re,im,truncated`.
pub fn write_cf(path: &Path, cf: &CfEstimate) -> Result<()> {
    let rows = cf
        .grid
        .iter()
        .zip(&cf.values)
        .zip(&cf.truncated)
        .map(|((s, g), t)| vec![s.to_string(), g.re.to_string(), g.im.to_string(), t.to_string()]);
    write_table(path, &["s", "re", "im", "truncated"], rows)
}

/// `x,G_hat`.
pub fn write_cdf(path: &Path, cdf: &CdfEstimate) -> Result<()> {
    write_curve(path, "G_hat", &cdf.x_grid, &cdf.values)
}

/// `x,<column>`.
pub fn write_curve(path: &Path, column: &str, x: &[f64], y: &[f64]) -> Result<()> {
    let rows = x.iter().zip(y).map(|(x, y)| vec![x.to_string(), y.to_string()]);
    write_table(path, &["x", column], rows)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Describes one run directory; `config` holds the materialized settings so
/// the run can be reconstructed from the manifest alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_seconds: Option<f64>,
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seed: Option<u64>) -> Result<Self> {
        let config = serde_json::to_value(config)
            .map_err(|e| AppError::Config(format!("cannot serialize {command} config: {e}")))?;
        let canonical = serde_json::to_vec(&config).expect("json values always serialize");
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(&canonical),
            seed,
            config,
            outputs: Vec::new(),
            runtime_seconds: None,
        })
    }

    pub fn path_in(dir: &Path, command: &str) -> PathBuf {
        dir.join(format!("{command}.manifest.json"))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = Self::path_in(dir, &self.command);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::config::read_json(path)
    }

    /// Deserializes the stored config.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| AppError::Config(format!("manifest config does not match {}: {e}", std::any::type_name::<T>())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wkinv_core::{simulate, JobSizeModel, SimConfig};

    #[test]
    fn sample_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sample.csv");
        let model = JobSizeModel::exponential(1.0).unwrap();
        let sample = simulate(&model, &SimConfig { lambda: 0.5, xi: 1.0, n: 200, burn_in: None, seed: 4 }).unwrap();
        let meta = SampleMeta {
            lambda: 0.5,
            xi: 1.0,
            n: 200,
            seed: Some(4),
            burn_in: Some(1000),
            model: Some(ModelSpec::Exponential { rate: 1.0, eta: None }),
        };
        write_sample(&path, &sample, &meta).unwrap();
        let back = read_sample(&path).unwrap();
        assert_eq!(back.meta.as_ref(), Some(&meta));
        assert_eq!(back.observations, sample.observations());
        assert_eq!(back.times.as_deref(), sample.times());
        let rebuilt = back.into_sample(0.5, 1.0).unwrap();
        assert_eq!(rebuilt.busy_fraction(), sample.busy_fraction());
    }

    #[test]
    fn sample_without_times_or_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        fs::write(&path, "index,t,V\n0,,0\n1,,1.5\n2,,0\n3,,2\n").unwrap();
        let back = read_sample(&path).unwrap();
        assert_eq!(back.times, None);
        assert_eq!(back.meta, None);
        assert_eq!(back.into_sample(1.0, 1.0).unwrap().busy_fraction(), 0.5);
    }

    #[test]
    fn manifest_round_trip_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({"a": 1.5, "b": [1, 2]});
        let m = Manifest::new("simulate", &cfg, Some(7)).unwrap();
        assert_eq!(m.config_hash.len(), 64);
        let path = m.write(dir.path()).unwrap();
        assert!(path.ends_with("simulate.manifest.json"));
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(Manifest::new("simulate", &cfg, Some(7)).unwrap().config_hash, m.config_hash);
        assert_ne!(Manifest::new("simulate", &serde_json::json!({"a": 1.0}), None).unwrap().config_hash, m.config_hash);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
