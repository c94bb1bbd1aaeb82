//! The run manifest: what a finished (or interrupted) experiment produced.
//! Written after every completed stage so crashes leave a truthful record,
//! and consulted on resume to decide which stages can be skipped.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use sslkd_core::metrics::MetricsReport;

use crate::error::{AppError, AppResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub model: String,
    pub path: PathBuf,
    pub content_hash: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub checkpoints: Vec<CheckpointRef>,
    pub wall_secs: f64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub framework_version: String,
    pub config_hash: u64,
    pub seed: u64,
    pub stages: Vec<StageEntry>,
    /// Final validation metrics, one per evaluated model.
    pub reports: Vec<MetricsReport>,
}

impl RunManifest {
    pub fn new(config_hash: u64, seed: u64) -> Self {
        RunManifest {
            framework_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
            stages: Vec::new(),
            reports: Vec::new(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| AppError::Runtime(format!("manifest serialization failed: {e}")))?;
        fs::write(path, json).map_err(AppError::io(path))
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = fs::read_to_string(path).map_err(AppError::io(path))?;
        serde_json::from_str(&text)
            .map_err(|e| AppError::Runtime(format!("cannot parse manifest {path:?}: {e}")))
    }

    /// Stage start times must be monotone in pipeline order.
    pub fn check_stage_order(&self) -> AppResult<()> {
        for pair in self.stages.windows(2) {
            if pair[1].started_unix_ms < pair[0].started_unix_ms {
                return Err(AppError::Runtime(format!(
                    "stage {} started before {}",
                    pair[1].name, pair[0].name
                )));
            }
        }
        Ok(())
    }
}

pub fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(0xDEADBEEF, 7);
        m.stages.push(StageEntry {
            name: "teacher1_supervised".into(),
            checkpoints: vec![CheckpointRef {
                model: "teacher1_sup".into(),
                path: "checkpoints/teacher1_sup.ckpt".into(),
                content_hash: 42,
            }],
            wall_secs: 1.5,
            started_unix_ms: 100,
            finished_unix_ms: 200,
        });
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn stage_order_violations_are_caught() {
        let mut m = RunManifest::new(1, 1);
        for (name, at) in [("a", 100u64), ("b", 50)] {
            m.stages.push(StageEntry {
                name: name.into(),
                checkpoints: vec![],
                wall_secs: 0.0,
                started_unix_ms: at,
                finished_unix_ms: at + 1,
            });
        }
        assert!(m.check_stage_order().is_err());
    }
}
