//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic `SPL1`, version `u32`, tensor count `u32`, then per tensor:
//! name length `u16`, name bytes, rank `u8`, each dim as `u32`, and the raw
//! `f32` values.

use std::collections::HashMap;
use std::path::Path;

use super::config::ModelConfig;
use super::net::PoseNet;
use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"SPL1";
pub const VERSION: u32 = 1;

pub fn encode(model: &PoseNet<f32>) -> Vec<u8> {
    let params = model.named_params();
    let mut out = Vec::with_capacity(12 + model.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, _, t) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("file truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Raw tensors of a checkpoint, by name.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not an SPL1 checkpoint)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32(&format!("dims of {name}")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4, &format!("values of {name}"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push((name, dims, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

/// Rebuilds a model for `config` and fills it from checkpoint bytes. Every
/// parameter must be present with exactly the shape the config implies.
pub fn decode(bytes: &[u8], config: &ModelConfig) -> Result<PoseNet<f32>> {
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for (name, dims, data) in decode_tensors(bytes)? {
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::Checkpoint(format!("tensor {name} appears twice")));
        }
    }
    let mut model = PoseNet::new(config, 0)?;
    for p in model.params_mut() {
        let (dims, data) = tensors
            .remove(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} missing from checkpoint", p.name)))?;
        if dims != p.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {dims:?} in checkpoint but {:?} under this config",
                p.name,
                p.tensor.shape()
            )));
        }
        p.tensor.data_mut().copy_from_slice(&data);
    }
    if let Some(name) = tensors.keys().min() {
        return Err(Error::Checkpoint(format!(
            "checkpoint tensor {name} has no counterpart under this config"
        )));
    }
    Ok(model)
}

pub fn save(model: &PoseNet<f32>, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode(model))
}

pub fn load(path: &Path, config: &ModelConfig) -> Result<PoseNet<f32>> {
    decode(&fsutil::read(path)?, config)
}
