//! Run manifests written next to every output.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::io::write_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the canonical JSON of `{command, config, seed}`.
    pub config_digest: String,
    pub seed: u64,
    pub started_at_unix: f64,
    pub finished_at_unix: f64,
    pub artifacts: Vec<PathBuf>,
    pub tool_version: String,
    /// The resolved config, defaults filled in.
    pub config: serde_json::Value,
}

/// Canonical JSON: object keys sorted, no whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's map is ordered by key, so going through `Value` sorts.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn config_digest<T: Serialize>(command: &str, config: &T, seed: u64) -> Result<String> {
    let body = canonical_json(&serde_json::json!({
        "command": command,
        "config": config,
        "seed": seed,
    }))?;
    let hash = Sha256::digest(body.as_bytes());
    Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start<T: Serialize>(command: &str, config: &T, seed: u64) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config_digest: config_digest(command, config, seed)?,
            seed,
            started_at_unix: unix_now(),
            finished_at_unix: f64::NAN,
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
        })
    }

    /// Stamps the end time and writes the manifest to `path`.
    pub fn finish(mut self, path: &Path) -> Result<Self> {
        self.finished_at_unix = unix_now();
        write_json(path, &self)?;
        Ok(self)
    }
}

/// `<dir>/<stem>.manifest.json` for an output file `<dir>/<stem>.<ext>`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a": 1, "b": {"y": 2, "x": 3}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b": {"x": 3, "y": 2}, "a": 1}"#).unwrap();
        assert_eq!(config_digest("c", &a, 1).unwrap(), config_digest("c", &b, 1).unwrap());
        assert_ne!(config_digest("c", &a, 1).unwrap(), config_digest("c", &a, 2).unwrap());
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/table2.csv")), Path::new("out/table2.manifest.json"));
    }
}
