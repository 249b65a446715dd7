//! Checkpoint file format.
//!
//! ```text
//! "GRIT" | u32 LE format version | u32 LE header length | header JSON | payload
//! ```
//!
//! The header carries the model config plus a tensor manifest (name,
//! shape, byte offset into the payload, freeze flag, role). Payloads are
//! raw little-endian f64 in manifest order, so round trips are bit-exact
//! for parameters, freeze flags, optimizer state and config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::store::ParamStore;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GRIT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorRole {
    Param,
    RmsState,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    frozen: bool,
    role: TensorRole,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

/// Serializes a parameter store plus an arbitrary JSON-serializable config.
pub fn checkpoint_to_bytes<C: Serialize>(store: &ParamStore, config: &C) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();

    let mut push = |name: &str, tensor: &Tensor, frozen: bool, role: TensorRole, payload: &mut Vec<u8>| {
        let offset = payload.len() as u64;
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(ManifestEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
            frozen,
            role,
        });
    };

    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        let tensor = store.tensor(&name)?;
        push(&name, tensor, store.is_frozen(&name), TensorRole::Param, &mut payload);
        let rms = store
            .rms_state(&name)
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name:?} has no optimizer state")))?;
        push(&name, rms, false, TensorRole::RmsState, &mut payload);
    }

    let header = Header { config: serde_json::to_value(config)?, tensors };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(12 + header_bytes.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_checkpoint<C: Serialize>(store: &ParamStore, config: &C, path: &Path) -> Result<()> {
    let bytes = checkpoint_to_bytes(store, config)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Parses checkpoint bytes back into a store and the stored config value.
pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("file too short for header".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::Checkpoint(format!("header parse failed: {e}")))?;

    let payload = &bytes[header_end..];
    let mut expected_len = 0usize;
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let end = entry
            .offset
            .checked_add(count as u64 * 8)
            .ok_or_else(|| Error::Checkpoint("manifest offset overflow".into()))?;
        if entry.offset as usize != expected_len {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} offset {} disagrees with manifest order",
                entry.name, entry.offset
            )));
        }
        expected_len = end as usize;
    }
    if payload.len() != expected_len {
        return Err(Error::Checkpoint(format!(
            "payload length {} does not match manifest total {expected_len}",
            payload.len()
        )));
    }

    let mut store = ParamStore::new();
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let data: Vec<f64> = (0..count)
            .map(|k| {
                let s = start + k * 8;
                f64::from_le_bytes(payload[s..s + 8].try_into().unwrap())
            })
            .collect();
        let tensor = Tensor::from_vec(&entry.shape, data)?;
        match entry.role {
            TensorRole::Param => {
                store.insert(entry.name.clone(), tensor);
                store.set_frozen(&entry.name, entry.frozen)?;
            }
            TensorRole::RmsState => {
                if !store.contains(&entry.name) {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state {:?} precedes its parameter",
                        entry.name
                    )));
                }
                store.set_rms_state(&entry.name, tensor)?;
            }
        }
    }
    Ok((store, header.config))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let bytes = fs::read(path)?;
    load_checkpoint_bytes(&bytes)
}
