use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// What a run consumed and produced. Artifact paths are relative to the run
/// directory; no timestamps, so identical runs give identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// `None` when built-in defaults were used.
    pub config_path: Option<String>,
    /// SHA-256 of the config file bytes, or of the serialized defaults.
    pub config_hash: String,
    pub inputs: Vec<InputFile>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: Option<u64>,
        config_path: Option<&Path>,
        config_bytes: &[u8],
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_path: config_path.map(|p| p.display().to_string()),
            config_hash: sha256_hex(config_bytes),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputFile {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }
}
