//! Run manifests: one `manifest.json` per run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Artifact {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn hash(role: &str, path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        Ok(Self {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Every resolved flag, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
    }

    /// The manifest of the run directory holding `artifact`, if any.
    pub fn beside(artifact: &Path) -> CliResult<Option<Self>> {
        let dir = artifact.parent().unwrap_or(Path::new("."));
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::usage(format!("malformed manifest {}: {e}", path.display())))
    }
}
