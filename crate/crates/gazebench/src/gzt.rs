//! The `.gzt` binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "GZTN"
//! version u32      currently 1
//! rank    u32
//! dims    u32 × rank
//! dtype   u8       0 = u8, 1 = f32, 2 = f64
//! payload row-major element data
//! ```
//!
//! Session frame and heatmap-target files use dtype 0/1; dtype 2 exists so
//! checkpoints can round-trip full-precision parameters.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GZTN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::U8(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            Payload::U8(_) => 0,
            Payload::F32(_) => 1,
            Payload::F64(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GztTensor {
    pub dims: Vec<u32>,
    pub payload: Payload,
}

impl GztTensor {
    pub fn new(dims: Vec<u32>, payload: Payload) -> Result<Self> {
        let n: u64 = dims.iter().map(|&d| d as u64).product();
        if n != payload.len() as u64 {
            return Err(Error::TensorFormat(format!(
                "dims {:?} imply {} elements, payload has {}",
                dims,
                n,
                payload.len()
            )));
        }
        Ok(GztTensor { dims, payload })
    }

    pub fn element_count(&self) -> usize {
        self.payload.len()
    }
}

pub fn write<W: Write>(w: &mut W, t: &GztTensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
    for d in &t.dims {
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&[t.payload.dtype_code()])?;
    match &t.payload {
        Payload::U8(v) => w.write_all(v)?,
        Payload::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Payload::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read the header (dims and dtype code), leaving the reader positioned at
/// the start of the payload.
pub fn read_header<R: Read>(r: &mut R) -> Result<(Vec<u32>, u8)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::TensorFormat("bad magic, not a .gzt tensor".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::TensorFormat(format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)?);
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] > 2 {
        return Err(Error::TensorFormat(format!("unknown dtype {}", dtype[0])));
    }
    Ok((dims, dtype[0]))
}

pub fn read<R: Read>(r: &mut R) -> Result<GztTensor> {
    let (dims, dtype) = read_header(r)?;
    let n: u64 = dims.iter().map(|&d| d as u64).product();
    let n = usize::try_from(n).map_err(|_| Error::TensorFormat("tensor too large".into()))?;
    let payload = match dtype {
        0 => {
            let mut v = vec![0u8; n];
            r.read_exact(&mut v)?;
            Payload::U8(v)
        }
        1 => {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            Payload::F32(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
        _ => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Payload::F64(
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                    .collect(),
            )
        }
    };
    GztTensor::new(dims, payload)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
