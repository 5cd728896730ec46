//! Run manifest: everything needed to repeat a `train` or `sweep` run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use featacq::evaluation::CostAxis;
use featacq::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub path: PathBuf,
    pub label: String,
    pub rows: usize,
    /// Feature columns plus the label column.
    pub columns: usize,
    pub sha256: String,
}

impl DatasetFingerprint {
    pub fn file_digest(path: &Path) -> CliResult<String> {
        let bytes = std::fs::read(path).map_err(|e| featacq::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn verify(&self) -> CliResult<()> {
        let digest = Self::file_digest(&self.path)?;
        if digest != self.sha256 {
            return Err(CliError::Data(format!(
                "{} changed since the run (sha256 {digest}, manifest records {})",
                self.path.display(),
                self.sha256
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// `train` or `sweep`.
    pub command: String,
    pub started_at: String,
    pub finished_at: String,
    pub dataset: DatasetFingerprint,
    /// `uniform`, `linear` or `file:PATH`.
    pub costs: String,
    pub split_seed: u64,
    pub eval_seed: u64,
    pub eval_samples: usize,
    pub axis: CostAxis,
    /// Fully resolved training configs: one for `train`, the grid for `sweep`.
    pub configs: Vec<TrainConfig>,
    /// Artifact name to path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = featacq::io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        featacq::io::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }

    pub fn output(&self, dir: &Path, name: &str) -> CliResult<PathBuf> {
        self.outputs
            .get(name)
            .map(|rel| dir.join(rel))
            .ok_or_else(|| CliError::Data(format!("manifest lists no `{name}` output")))
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
