//! Checkpoint container: magic "GZCK", a version, a JSON meta blob (model
//! config plus caller-defined extras) and named parameter tensors in the
//! `.gzt` encoding at full `f64` precision. Saving is deterministic, so
//! save → load → save reproduces identical bytes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gzt::{self, GztTensor, Payload};
use crate::tensor::Tensor;

use super::{ModelConfig, ParamSet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GZCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    extra: serde_json::Value,
}

/// Everything stored in a checkpoint file.
#[derive(Debug, Clone)]
pub struct CheckpointPayload {
    pub model: ModelConfig,
    /// Caller-defined metadata (training config, step counters, ...).
    pub extra: serde_json::Value,
    /// Named tensors in a fixed, caller-chosen order.
    pub tensors: Vec<(String, Tensor)>,
}

impl CheckpointPayload {
    pub fn tensor_map(&self) -> HashMap<&str, &Tensor> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    /// Reassemble a parameter set from entries named `<prefix><param>`.
    pub fn params(&self, prefix: &str) -> Result<ParamSet> {
        let map = self.tensor_map();
        let mut params = ParamSet::zeros(&self.model);
        for (name, slot) in params.named_mut() {
            let key = format!("{prefix}{name}");
            let found = map
                .get(key.as_str())
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {key}")))?;
            if found.dims != slot.dims {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {key} has dims {:?}, expected {:?}",
                    found.dims, slot.dims
                )));
            }
            *slot = (*found).clone();
        }
        Ok(params)
    }
}

/// Flatten a parameter set into `(name, tensor)` entries with a prefix.
pub fn param_entries(prefix: &str, params: &ParamSet) -> Vec<(String, Tensor)> {
    params
        .named()
        .iter()
        .map(|(name, t)| (format!("{prefix}{name}"), (*t).clone()))
        .collect()
}

pub fn save_checkpoint(path: &Path, payload: &CheckpointPayload) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let meta = serde_json::to_vec(&CheckpointMeta {
        model: payload.model,
        extra: payload.extra.clone(),
    })?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(&meta)?;
    w.write_all(&(payload.tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in &payload.tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let dims: Vec<u32> = tensor.dims.iter().map(|&d| d as u32).collect();
        let gt = GztTensor::new(dims, Payload::F64(tensor.data.clone()))
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        gzt::write(&mut w, &gt)?;
    }
    w.flush()?;
    Ok(())
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::CorruptCheckpoint(msg.into()))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointPayload> {
    let mut r = BufReader::new(File::open(path)?);
    let run = |r: &mut BufReader<File>| -> Result<CheckpointPayload> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return corrupt("bad magic, not a GZCK checkpoint");
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let meta_len = read_u32(r)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_buf)
            .map_err(|e| Error::CorruptCheckpoint(format!("bad meta: {e}")))?;
        let count = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            if name_len > 4096 {
                return corrupt("implausible tensor name length");
            }
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::CorruptCheckpoint("tensor name not utf-8".into()))?;
            let gt = gzt::read(r)?;
            let data = match gt.payload {
                Payload::F64(v) => v,
                _ => return corrupt(format!("tensor {name} is not f64")),
            };
            tensors.push((
                name,
                Tensor::from_vec(&gt.dims.iter().map(|&d| d as usize).collect::<Vec<_>>(), data),
            ));
        }
        Ok(CheckpointPayload {
            model: meta.model,
            extra: meta.extra,
            tensors,
        })
    };
    run(&mut r).map_err(|e| match e {
        // A short read means the file was cut off.
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::CorruptCheckpoint("file truncated".into())
        }
        Error::TensorFormat(msg) => Error::CorruptCheckpoint(msg),
        other => other,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
