//! Run manifest: what produced an output directory and what it contains.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the raw config bytes; empty input when no file was given.
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
    pub created: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("manifest_format".to_string(), "1".to_string());
        Self {
            command: command.into(),
            config_hash: sha256_hex(config_bytes),
            seed,
            versions,
            outputs: Vec::new(),
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Records the listed files of `dir`, sorted by name.
    pub fn inventory(&mut self, dir: &Path, files: &[String]) -> Result<(), HarnessError> {
        let mut files = files.to_vec();
        files.sort();
        files.dedup();
        self.outputs = files
            .into_iter()
            .map(|f| {
                let bytes = std::fs::read(dir.join(&f))?;
                Ok(OutputFile { bytes: bytes.len() as u64, sha256: sha256_hex(&bytes), file: f })
            })
            .collect::<Result<_, std::io::Error>>()?;
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text + "\n")
            .map_err(|e| HarnessError::Data(format!("cannot write manifest: {e}")))
    }
}
