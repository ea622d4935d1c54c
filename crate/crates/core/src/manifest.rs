//! Run manifests: every CLI invocation records what it read, what it wrote,
//! and the exact configuration, with SHA-256 checksums for the artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub subcommand: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let data = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&data);
    Ok(hex::encode(hasher.finalize()))
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(subcommand: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA,
            subcommand: subcommand.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(ArtifactRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(ArtifactRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Finish and write `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Verify that every recorded artifact still hashes to its checksum.
    pub fn verify(&self) -> Result<()> {
        for a in self.inputs.iter().chain(&self.outputs) {
            let actual = sha256_file(Path::new(&a.path))?;
            if actual != a.sha256 {
                return Err(Error::Checkpoint(format!("checksum mismatch for {}", a.path)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() })
    }
}
