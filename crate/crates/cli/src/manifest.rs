//! Per-run manifest: produced files with digests, seed and resolved config.

use std::fs;
use std::path::Path;

use netinvert::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a ExperimentConfig,
    files: Vec<FileEntry>,
    summary: serde_json::Value,
}

/// Writes `<out>/<name>` describing `files` (names relative to `out`).
pub fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    name: &str,
    files: &[String],
    summary: serde_json::Value,
) -> Result<()> {
    let out = &cfg.out;
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let path = out.join(f);
        let bytes = fs::read(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
        entries.push(FileEntry { path: f.clone(), sha256: hex(&Sha256::digest(&bytes)) });
    }
    let manifest = Manifest {
        command,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg,
        files: entries,
        summary,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Encode(e.to_string()))?;
    write_text(&out.join(name), &(json + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
