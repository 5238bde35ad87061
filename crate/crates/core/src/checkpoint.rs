//! Binary parameter archives.
//!
//! Layout: the 8-byte magic `MSGNETCK`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header, then every tensor as
//! little-endian `f64` values in header order. The header records the model
//! kind, the SHA-256 of the configuration JSON, and each tensor's name,
//! shape and byte offset into the data section. Loading checks all three.

use std::fs;
use std::path::Path;

use msgnet_autograd::nn::{named_params, Module};
use msgnet_autograd::Tensor;
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MSGNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub fingerprint: String,
    pub tensors: Vec<TensorEntry>,
}

/// SHA-256 (hex) of the canonical JSON form of a configuration.
pub fn fingerprint<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

pub fn encode_checkpoint<C: Serialize>(kind: &str, config: &C, module: &dyn Module) -> Result<Vec<u8>> {
    let params = named_params(module);
    let mut data = Vec::new();
    let mut tensors = Vec::with_capacity(params.len());
    for (name, p) in &params {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: p.shape(),
            offset: data.len() as u64,
        });
        p.with_value(|t| {
            for v in t.iter() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        });
    }
    let header = serde_json::to_vec(&CheckpointHeader {
        kind: kind.to_string(),
        fingerprint: fingerprint(config)?,
        tensors,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint archive (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < len {
        return Err(corrupt("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..len]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    Ok((header, &body[len..]))
}

/// Restores every parameter and buffer of `module` from `bytes`.
pub fn decode_checkpoint<C: Serialize>(bytes: &[u8], kind: &str, config: &C, module: &dyn Module) -> Result<()> {
    let (header, data) = read_header(bytes)?;
    if header.kind != kind {
        return Err(corrupt(format!("checkpoint holds a {} model, expected {kind}", header.kind)));
    }
    if header.fingerprint != fingerprint(config)? {
        return Err(corrupt("configuration fingerprint mismatch"));
    }
    let params = named_params(module);
    if params.len() != header.tensors.len() {
        return Err(corrupt(format!(
            "checkpoint has {} tensors, model has {}",
            header.tensors.len(),
            params.len()
        )));
    }
    // Parse everything before touching the model so a bad archive leaves it unchanged.
    let mut values = Vec::with_capacity(params.len());
    for ((name, p), entry) in params.iter().zip(&header.tensors) {
        if *name != entry.name || p.shape() != entry.shape {
            return Err(corrupt(format!(
                "tensor mismatch: model {name} {:?}, checkpoint {} {:?}",
                p.shape(),
                entry.name,
                entry.shape
            )));
        }
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let bytes = data
            .get(start..start + 8 * n)
            .ok_or_else(|| corrupt(format!("data for {name} is truncated")))?;
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        values.push(Tensor::from_shape_vec(IxDyn(&entry.shape), v).expect("sized"));
    }
    for ((_, p), v) in params.iter().zip(values) {
        p.set(v);
    }
    Ok(())
}

pub fn save_checkpoint<C: Serialize>(path: impl AsRef<Path>, kind: &str, config: &C, module: &dyn Module) -> Result<()> {
    fs::write(path, encode_checkpoint(kind, config, module)?)?;
    Ok(())
}

pub fn load_checkpoint<C: Serialize>(path: impl AsRef<Path>, kind: &str, config: &C, module: &dyn Module) -> Result<()> {
    decode_checkpoint(&fs::read(path)?, kind, config, module)
}

/// Copies values from `src` into `dst`; both must expose the same names and
/// shapes. Returns the number of tensors copied.
pub fn copy_params(src: &dyn Module, dst: &dyn Module) -> Result<usize> {
    let s = named_params(src);
    let d = named_params(dst);
    if s.len() != d.len() {
        return Err(Error::shape(format!("source has {} tensors, destination {}", s.len(), d.len())));
    }
    for ((sn, sp), (dn, dp)) in s.iter().zip(&d) {
        if sn != dn || sp.shape() != dp.shape() {
            return Err(Error::shape(format!("cannot copy {sn} {:?} into {dn} {:?}", sp.shape(), dp.shape())));
        }
    }
    for ((_, sp), (_, dp)) in s.iter().zip(&d) {
        dp.set(sp.value());
    }
    Ok(s.len())
}
