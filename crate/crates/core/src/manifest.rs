//! Run manifest: the effective config snapshot, seed, code identity, wall
//! times, and a checksummed inventory of every artifact the run emitted.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub command: String,
    pub seed: u64,
    /// Crate version plus the build's git commit when known.
    pub code_identity: String,
    pub config_snapshot: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<ArtifactRecord>,
}

pub fn code_identity() -> String {
    match option_env!("GIT_COMMIT") {
        Some(commit) => format!("meg {} ({commit})", env!("CARGO_PKG_VERSION")),
        None => format!("meg {}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn checksum_file(path: &Path) -> Result<ArtifactRecord> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(ArtifactRecord {
        path: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256,
        bytes: bytes.len() as u64,
    })
}

impl RunManifest {
    pub fn new(name: &str, command: &str, seed: u64, config_snapshot: String) -> Self {
        RunManifest {
            name: name.to_string(),
            command: command.to_string(),
            seed,
            code_identity: code_identity(),
            config_snapshot,
            started_unix: now_unix(),
            finished_unix: 0,
            artifacts: Vec::new(),
        }
    }

    /// Checksums and records one artifact living inside the run directory.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        self.artifacts.push(checksum_file(path)?);
        Ok(())
    }

    pub fn finish_and_write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = now_unix();
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self).expect("manifest serializes"),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_records_artifacts_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("metrics.csv");
        fs::write(&file, "step,loss\n1,0.5\n").unwrap();
        let mut manifest = RunManifest::new("t", "train", 7, "[training]\n".to_string());
        manifest.record(&file).unwrap();
        manifest.finish_and_write(dir.path()).unwrap();

        let loaded: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(loaded.artifacts.len(), 1);
        assert_eq!(loaded.artifacts[0].path, "metrics.csv");
        assert_eq!(loaded.artifacts[0].sha256.len(), 64);
        assert_eq!(loaded.seed, 7);

        // Same content, same checksum.
        let again = checksum_file(&file).unwrap();
        assert_eq!(again.sha256, loaded.artifacts[0].sha256);
    }
}
