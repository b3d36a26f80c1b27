//! `manifest.json`: what produced an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct DatasetFingerprint {
    pub role: String,
    pub source: String,
    pub files: usize,
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: Vec<String>,
    pub config_path: Option<PathBuf>,
    /// SHA-256 of the canonical (key-sorted) config text.
    pub config_hash: String,
    pub datasets: Vec<DatasetFingerprint>,
    pub timestamp: String,
    pub output_dir: PathBuf,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("sha256:{:x}", Sha256::digest(bytes))
}

/// Hashes every file under `root` (relative path, length, contents) in path order.
pub fn fingerprint_dir(role: &str, root: &Path) -> anyhow::Result<DatasetFingerprint> {
    let mut h = Sha256::new();
    let mut files = 0;
    let mut entries: Vec<PathBuf> = Vec::new();
    for e in WalkDir::new(root).sort_by_file_name() {
        let e = e.with_context(|| format!("cannot walk {}", root.display()))?;
        if e.file_type().is_file() {
            entries.push(e.into_path());
        }
    }
    for p in entries {
        let bytes = fs::read(&p).with_context(|| format!("cannot read {}", p.display()))?;
        let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        files += 1;
    }
    Ok(DatasetFingerprint {
        role: role.into(),
        source: root.display().to_string(),
        files,
        content_hash: format!("sha256:{:x}", h.finalize()),
    })
}

/// Fingerprint of generated data: the generator settings and image count.
pub fn fingerprint_synthetic(role: &str, settings: &str, n_images: usize) -> DatasetFingerprint {
    DatasetFingerprint {
        role: role.into(),
        source: "synthetic".into(),
        files: n_images,
        content_hash: sha256_hex(settings.as_bytes()),
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        let p = dir.join(FILE);
        fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))
    }
}
