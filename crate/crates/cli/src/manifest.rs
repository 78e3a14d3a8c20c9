//! Run manifest: config hash, per-stage status and timings, and a checksum
//! for every emitted file.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Passed,
    /// Ran to completion but a check did not hold.
    ChecksFailed,
    Failed,
    /// Not run because a stage it needs failed.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub seconds: f64,
    pub error: Option<String>,
    /// Names of the checks that did not hold.
    pub failed_checks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_sha256: String,
    pub command: String,
    pub deterministic: bool,
    pub threads: usize,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String, deterministic: bool, threads: usize) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256,
            command: command.into(),
            deterministic,
            threads,
            stages: Vec::new(),
            files: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Passed)
    }

    pub fn record_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let bytes = std::fs::read(dir.join(name)).with_context(|| format!("reading {name} back for its checksum"))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileRecord {
            path: name.into(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n").context("writing manifest")
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn inventory_replaces_rewritten_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("solve", "x".into(), true, 1);
        std::fs::write(dir.path().join("a.csv"), "1\n").unwrap();
        m.record_file(dir.path(), "a.csv").unwrap();
        std::fs::write(dir.path().join("a.csv"), "22\n").unwrap();
        m.record_file(dir.path(), "a.csv").unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.files[0].bytes, 3);
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
