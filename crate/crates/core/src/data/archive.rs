//! Binary array container with a JSON manifest sidecar.
//!
//! `<name>.bin` holds the raw elements (little-endian f32, or u8) row-major,
//! then the u32 labels when present. `<name>.json` records the builder spec,
//! seed, shape, dtype and the SHA-256 of the binary payload; `load_archive`
//! recomputes and verifies the hash.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MegError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveDtype {
    F32,
    U8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub spec: serde_json::Value,
    pub seed: u64,
    pub rows: u64,
    pub cols: u64,
    pub dtype: ArchiveDtype,
    pub has_labels: bool,
    pub sha256: String,
}

/// In-memory payload of one archive.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayArchive {
    F32 { data: Array2<f32>, labels: Option<Vec<u32>> },
    U8 { data: Array2<u8>, labels: Option<Vec<u32>> },
}

impl ArrayArchive {
    pub fn rows(&self) -> usize {
        match self {
            ArrayArchive::F32 { data, .. } => data.nrows(),
            ArrayArchive::U8 { data, .. } => data.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            ArrayArchive::F32 { data, .. } => data.ncols(),
            ArrayArchive::U8 { data, .. } => data.ncols(),
        }
    }

    pub fn dtype(&self) -> ArchiveDtype {
        match self {
            ArrayArchive::F32 { .. } => ArchiveDtype::F32,
            ArrayArchive::U8 { .. } => ArchiveDtype::U8,
        }
    }

    pub fn labels(&self) -> Option<&[u32]> {
        match self {
            ArrayArchive::F32 { labels, .. } | ArrayArchive::U8 { labels, .. } => labels.as_deref(),
        }
    }

    /// The payload as f32 regardless of storage dtype (u8 maps to [0, 1]).
    pub fn to_f32(&self) -> Array2<f32> {
        match self {
            ArrayArchive::F32 { data, .. } => data.clone(),
            ArrayArchive::U8 { data, .. } => data.mapv(|v| v as f32 / 255.0),
        }
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        match self {
            ArrayArchive::F32 { data, labels } => {
                bytes.reserve(data.len() * 4);
                for &v in data.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(labels) = labels {
                    for &l in labels {
                        bytes.extend_from_slice(&l.to_le_bytes());
                    }
                }
            }
            ArrayArchive::U8 { data, labels } => {
                bytes.reserve(data.len());
                bytes.extend(data.iter().copied());
                if let Some(labels) = labels {
                    for &l in labels {
                        bytes.extend_from_slice(&l.to_le_bytes());
                    }
                }
            }
        }
        bytes
    }
}

fn hex(digest: &[u8]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<dir>/<name>.bin` and `<dir>/<name>.json`; returns the manifest
/// path.
pub fn save_archive(
    dir: &Path,
    name: &str,
    archive: &ArrayArchive,
    spec: serde_json::Value,
    seed: u64,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    if let Some(labels) = archive.labels() {
        if labels.len() != archive.rows() {
            return Err(MegError::config(format!(
                "{} labels for {} rows",
                labels.len(),
                archive.rows()
            )));
        }
    }
    let payload = archive.payload_bytes();
    let manifest = ArchiveManifest {
        spec,
        seed,
        rows: archive.rows() as u64,
        cols: archive.cols() as u64,
        dtype: archive.dtype(),
        has_labels: archive.labels().is_some(),
        sha256: hex(&Sha256::digest(&payload)),
    };
    fs::write(dir.join(format!("{name}.bin")), payload)?;
    let manifest_path = dir.join(format!("{name}.json"));
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(manifest_path)
}

/// Reads an archive back and verifies the payload hash against the manifest.
pub fn load_archive(dir: &Path, name: &str) -> Result<(ArrayArchive, ArchiveManifest)> {
    let manifest_path = dir.join(format!("{name}.json"));
    let manifest: ArchiveManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path)
            .map_err(|e| MegError::Ingestion(format!("missing archive manifest {manifest_path:?}: {e}")))?,
    )
    .map_err(|e| MegError::Ingestion(format!("unreadable archive manifest: {e}")))?;
    let payload = fs::read(dir.join(format!("{name}.bin")))?;
    if hex(&Sha256::digest(&payload)) != manifest.sha256 {
        return Err(MegError::Integrity(format!(
            "archive {name} payload does not match its manifest hash"
        )));
    }

    let rows = manifest.rows as usize;
    let cols = manifest.cols as usize;
    let n = rows * cols;
    let elem = match manifest.dtype {
        ArchiveDtype::F32 => 4,
        ArchiveDtype::U8 => 1,
    };
    let label_bytes = if manifest.has_labels { rows * 4 } else { 0 };
    if payload.len() != n * elem + label_bytes {
        return Err(MegError::Integrity(format!(
            "archive {name} has {} bytes, expected {}",
            payload.len(),
            n * elem + label_bytes
        )));
    }

    let labels = if manifest.has_labels {
        let off = n * elem;
        Some(
            (0..rows)
                .map(|i| u32::from_le_bytes(payload[off + i * 4..off + i * 4 + 4].try_into().unwrap()))
                .collect::<Vec<u32>>(),
        )
    } else {
        None
    };

    let archive = match manifest.dtype {
        ArchiveDtype::F32 => {
            let mut data = Array2::zeros((rows, cols));
            for (i, v) in data.iter_mut().enumerate() {
                *v = f32::from_le_bytes(payload[i * 4..i * 4 + 4].try_into().unwrap());
            }
            ArrayArchive::F32 { data, labels }
        }
        ArchiveDtype::U8 => {
            let data = Array2::from_shape_vec((rows, cols), payload[..n].to_vec())
                .expect("shape matches payload");
            ArrayArchive::U8 { data, labels }
        }
    };
    Ok((archive, manifest))
}
