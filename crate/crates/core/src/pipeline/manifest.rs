//! Per-stage manifests: input/output hashes, config snapshot, seed and wall
//! time, forming a verifiable chain between pipeline stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path.as_ref())
        .map_err(|e| Error::Validation(format!("cannot hash {}: {e}", path.as_ref().display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// Input path -> sha256 at the time the stage ran.
    pub inputs: BTreeMap<String, String>,
    /// Output path -> sha256 of what the stage wrote.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_ms: u64,
}

impl Manifest {
    pub fn new(command: impl Into<String>, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            command: command.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_time_ms: 0,
        }
    }

    pub fn record_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&content)?)
    }

    /// Recompute hashes of this manifest's outputs; report any drift.
    /// Missing files are reported as drift too.
    pub fn stale_outputs(&self) -> Vec<String> {
        let mut stale = Vec::new();
        for (path, recorded) in &self.outputs {
            match sha256_file(path) {
                Ok(current) if &current == recorded => {}
                Ok(_) => stale.push(format!("{path} changed since it was produced")),
                Err(_) => stale.push(format!("{path} is missing")),
            }
        }
        stale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn manifest_round_trips_and_detects_drift() {
        let dir = TempDir::new().unwrap();
        let artifact = dir.path().join("artifact.txt");
        fs::write(&artifact, "hello").unwrap();

        let mut manifest = Manifest::new("test", 1, BTreeMap::new());
        manifest.record_output(&artifact).unwrap();
        let manifest_path = dir.path().join("manifest.json");
        manifest.save(&manifest_path).unwrap();

        let loaded = Manifest::load(&manifest_path).unwrap();
        assert_eq!(loaded, manifest);
        assert!(loaded.stale_outputs().is_empty());

        fs::write(&artifact, "changed").unwrap();
        let stale = loaded.stale_outputs();
        assert_eq!(stale.len(), 1);
        assert!(stale[0].contains("changed since"));
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("empty");
        fs::write(&path, "").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
