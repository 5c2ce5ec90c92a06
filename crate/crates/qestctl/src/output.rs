//! Atomic file emission and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Writes `bytes` to `dir/name` through a temporary sibling and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io(e, &tmp))?;
        f.write_all(bytes).map_err(|e| io(e, &tmp))?;
        f.sync_all().map_err(|e| io(e, &tmp))?;
    }
    fs::rename(&tmp, &target).map_err(|e| io(e, &target))?;
    Ok(target)
}

pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// RFC-4180 CSV with a fixed header row.
pub fn csv_bytes(header: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub optimizer: Option<u64>,
    pub measurement: Option<u64>,
    pub bootstrap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_name: String,
    pub scenario_sha256: String,
    pub schema_version: u32,
    pub tool_version: String,
    pub rng: String,
    pub seeds: Seeds,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
    /// Command-specific headline numbers.
    pub summary: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";
