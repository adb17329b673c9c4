//! Little-endian weights file.
//!
//! ```text
//! "PCALW001"                       8 bytes
//! u32 tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u32 rank, u32 dims[rank]
//!   f32 values[product(dims)]
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::regressor::net::{Tensor, Weights};

pub const MAGIC: &[u8; 8] = b"PCALW001";

#[derive(Debug, Error)]
pub enum WeightsFileError {
    #[error("corrupt weights file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn corrupt(msg: impl Into<String>) -> WeightsFileError {
    WeightsFileError::Corrupt(msg.into())
}

pub fn encode(w: &Weights<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * w.num_params() + 64 * w.tensors.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(w.tensors.len() as u32).to_le_bytes());
    for t in &w.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightsFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses a weights file and checks it against the network architecture.
pub fn decode(bytes: &[u8]) -> Result<Weights<f32>, WeightsFileError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| corrupt("bad magic"))? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("tensor size overflows"))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor size overflows"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    let w = Weights { tensors };
    w.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(w)
}

pub fn save_weights(w: &Weights<f32>, path: impl AsRef<Path>) -> Result<(), WeightsFileError> {
    fs::write(path, encode(w))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Weights<f32>, WeightsFileError> {
    decode(&fs::read(path)?)
}
