//! Binary checkpoint: magic `XLMC`, u16 version, 32-byte config hash, u32
//! tensor count, then per tensor: u16 name length, name, u8 rank, u32 dims,
//! u8 precision (byte width), little-endian payload.

use std::path::Path;

use xlm_tensor::{Float, RngStream};

use super::config::{hex, ModelConfig};
use super::network::Model;
use crate::codec::{put_u16, put_u32, AnyTensor, Reader};
use crate::error::{format, CoreError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XLMC";
pub const CHECKPOINT_VERSION: u16 = 1;

pub struct CheckpointData {
    pub version: u16,
    pub config_hash: [u8; 32],
    pub tensors: Vec<(String, AnyTensor)>,
}

pub fn encode_checkpoint<T: Float>(m: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    out.extend_from_slice(&m.cfg.hash());
    put_u32(&mut out, m.store.len() as u32);
    for (_, p) in m.store.iter() {
        put_u16(&mut out, p.name.len() as u16);
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            put_u32(&mut out, d as u32);
        }
        out.push(T::PRECISION.code());
        out.extend_from_slice(&p.value.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointData> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return format(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"));
    }
    let config_hash: [u8; 32] = r.bytes(32, "config hash")?.try_into().unwrap();
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for i in 0..count {
        let len = r.u16(&format!("tensor {i} name length"))? as usize;
        let name = std::str::from_utf8(r.bytes(len, &format!("tensor {i} name"))?)
            .map_err(|_| CoreError::Format(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        let rank = r.u8(&format!("{name} rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("{name} dims"))? as usize);
        }
        if shape.is_empty() || shape.contains(&0) {
            return format(format!("{name}: invalid shape {shape:?}"));
        }
        let precision = r.precision(&format!("{name} precision"))?;
        let n: usize = shape.iter().product();
        let payload = r.bytes(n * precision.bytes(), &format!("{name} payload"))?;
        tensors.push((name, AnyTensor::from_le_bytes(precision, &shape, payload)?));
    }
    if !r.is_empty() {
        return format(format!("{} trailing bytes after last tensor", r.remaining()));
    }
    Ok(CheckpointData { version, config_hash, tensors })
}

pub fn save_checkpoint<T: Float>(m: &Model<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(m)).map_err(|e| CoreError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointData> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Rebuilds the model for `cfg` and fills every parameter from the file.
/// Nothing is returned unless the whole file is valid and matches `cfg`.
pub fn load_checkpoint<T: Float>(path: &Path, cfg: &ModelConfig) -> Result<Model<T>> {
    let data = read_checkpoint(path)?;
    model_from_checkpoint(&data, cfg)
}

pub fn model_from_checkpoint<T: Float>(data: &CheckpointData, cfg: &ModelConfig) -> Result<Model<T>> {
    let want = cfg.hash();
    if data.config_hash != want {
        return format(format!("config hash mismatch: checkpoint {} vs config {}", hex(&data.config_hash), hex(&want)));
    }
    let mut m = Model::<T>::build(cfg, &mut RngStream::new(cfg.seed))?;
    if data.tensors.len() != m.store.len() {
        return format(format!("checkpoint holds {} tensors, model has {}", data.tensors.len(), m.store.len()));
    }
    let mut seen = vec![false; m.store.len()];
    for (name, t) in &data.tensors {
        let id = m.store.find(name).ok_or_else(|| CoreError::Format(format!("unknown tensor {name}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return format(format!("tensor {name} appears twice"));
        }
        if t.shape() != m.store.value(id).shape() {
            return format(format!("{name}: shape {:?} vs model {:?}", t.shape(), m.store.value(id).shape()));
        }
        *m.store.value_mut(id) = t.to_typed();
    }
    Ok(m)
}
