// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor archive: a JSON manifest next to one little-endian binary blob.
//!
//! Every tensor starts on a 64-byte boundary and is stored row-major. The
//! manifest records the blob's length and SHA-256 so truncation and
//! corruption are caught before any tensor is read.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT: &str = "lookahead-tensors";
pub const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";
const ALIGN: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub len: u64,
    pub sha256: String,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        (self.numel() * self.dtype.size()) as u64
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub blob: BlobInfo,
    /// Free-form metadata: model hyperparameters, probe settings, ...
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Serialises tensors into the canonical blob layout and returns the blob
/// with its manifest entries.
pub fn encode_blob(tensors: &[NamedTensor]) -> Result<(Vec<u8>, Vec<TensorEntry>)> {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(Error::archive(
                &t.name,
                format!("shape {:?} holds {numel} values but data has {}", t.shape, t.data.len()),
            ));
        }
        if entries.iter().any(|e: &TensorEntry| e.name == t.name) {
            return Err(Error::archive(&t.name, "duplicate tensor name"));
        }
        let pad = (ALIGN - blob.len() % ALIGN) % ALIGN;
        blob.resize(blob.len() + pad, 0);
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: t.data.dtype(),
            offset: blob.len() as u64,
        });
        t.data.write_le(&mut blob);
    }
    Ok((blob, entries))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `dir/manifest.json` and `dir/weights.bin`, creating `dir`.
/// Returns the blob hash.
pub fn write_archive(dir: &Path, meta: serde_json::Value, tensors: &[NamedTensor]) -> Result<String> {
    let (blob, entries) = encode_blob(tensors)?;
    let sha = sha256_hex(&blob);
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        blob: BlobInfo { file: BLOB_FILE.to_string(), len: blob.len() as u64, sha256: sha.clone() },
        meta,
        tensors: entries,
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(BLOB_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(sha)
}

/// Accepts either the archive directory or the manifest file itself.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Reads and verifies an archive. Tensors come back in manifest order.
pub fn read_archive(path: &Path) -> Result<(Manifest, Vec<NamedTensor>)> {
    let mpath = manifest_path(path);
    if !mpath.exists() {
        return Err(Error::MissingInput(mpath));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)
        .map_err(|e| Error::archive_general(format!("bad manifest {}: {e}", mpath.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::archive_general(format!("unknown format {:?}", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(Error::archive_general(format!("unsupported version {}", manifest.version)));
    }
    let bpath = mpath.parent().unwrap_or(Path::new(".")).join(&manifest.blob.file);
    if !bpath.exists() {
        return Err(Error::MissingInput(bpath));
    }
    let blob = fs::read(&bpath)?;
    if blob.len() as u64 != manifest.blob.len {
        return Err(Error::archive_general(format!(
            "blob is {} bytes, manifest says {}",
            blob.len(),
            manifest.blob.len
        )));
    }
    let tensors = decode_tensors(&manifest.tensors, &blob)?;
    let sha = sha256_hex(&blob);
    if sha != manifest.blob.sha256 {
        return Err(Error::archive_general(format!(
            "blob checksum mismatch: expected {}, found {sha}",
            manifest.blob.sha256
        )));
    }
    Ok((manifest, tensors))
}

fn decode_tensors(entries: &[TensorEntry], blob: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let start = e.offset;
        let end = start
            .checked_add(e.byte_len())
            .ok_or_else(|| Error::archive(&e.name, "extent overflows"))?;
        if end > blob.len() as u64 {
            return Err(Error::archive(
                &e.name,
                format!("extent {start}..{end} exceeds blob length {}", blob.len()),
            ));
        }
        let bytes = &blob[start as usize..end as usize];
        let data = match e.dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        out.push(NamedTensor { name: e.name.clone(), shape: e.shape.clone(), data });
    }
    Ok(out)
}
