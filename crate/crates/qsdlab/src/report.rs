//! CSV artifacts and JSON run manifests. Outputs are written atomically
//! (temp file + rename) so partially written files never appear.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// Run manifest: everything needed to reproduce an output bit-for-bit.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub r: f64,
    pub measure_hash: String,
    pub measure: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tolerances: serde_json::Value,
    pub code_version: String,
}

impl RunManifest {
    pub fn new(command: &str, r: f64, measure: &crate::measures::InitialMeasure) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            r,
            measure_hash: measure.hash(),
            measure: serde_json::to_value(measure.to_spec()).unwrap(),
            s: None,
            t_grid: None,
            distance: None,
            seed: None,
            tolerances: serde_json::json!({}),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &format!("{}\n", serde_json::to_string_pretty(value)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_roundtrip() {
        let dir = std::env::temp_dir().join("qsdlab-report-test");
        let path = dir.join("x.csv");
        write_atomic(&path, "a,b\n1,2\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
        std::fs::remove_dir_all(&dir).ok();
    }
}
