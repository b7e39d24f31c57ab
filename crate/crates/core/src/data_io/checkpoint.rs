//! Single-file model archive.
//!
//! Layout: `NINVCKPT` magic, little-endian `u64` manifest length, JSON
//! manifest, raw little-endian `f32` tensor blobs in manifest order, then a
//! SHA-256 digest of everything before it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NINVCKPT";
const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Classifier,
    Generator,
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckpointKind::Classifier => "classifier",
            CheckpointKind::Generator => "generator",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: serde_json::Value,
    pub seed: u64,
    pub epoch: u64,
    pub tensors: BTreeMap<String, NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: CheckpointKind,
    seed: u64,
    epoch: u64,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob section, in elements.
    offset: usize,
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Kind {
                expected: kind.to_string(),
                found: self.kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Integrity(format!("missing tensor `{name}`")))
    }

    /// SHA-256 over tensor names, shapes and bits, in name order.
    pub fn parameter_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {:?} but {} values",
                    t.shape,
                    t.data.len()
                )));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += t.data.len();
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            seed: self.seed,
            epoch: self.epoch,
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Encode(e.to_string()))?;

        let mut out = Vec::with_capacity(16 + json.len() + offset * 4 + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
            return Err(Error::Integrity(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Integrity("not a checkpoint archive (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("digest mismatch (corrupted or truncated file)".into()));
        }
        let json_len = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let json = body
            .get(16..16 + json_len)
            .ok_or_else(|| Error::Integrity("manifest overruns file".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let blob = &body[16 + json_len..];
        let mut tensors = BTreeMap::new();
        let mut expected_offset = 0;
        for e in manifest.tensors {
            let len: usize = e.shape.iter().product();
            if e.offset != expected_offset {
                return Err(Error::Integrity(format!("tensor `{}` has a bad offset", e.name)));
            }
            let raw = blob
                .get(e.offset * 4..(e.offset + len) * 4)
                .ok_or_else(|| Error::Integrity(format!("tensor `{}` overruns blob", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            expected_offset += len;
            tensors.insert(e.name, NamedTensor { shape: e.shape, data });
        }
        if expected_offset * 4 != blob.len() {
            return Err(Error::Integrity("trailing bytes after tensor blobs".into()));
        }
        Ok(Checkpoint {
            kind: manifest.kind,
            config: manifest.config,
            seed: manifest.seed,
            epoch: manifest.epoch,
            tensors,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
