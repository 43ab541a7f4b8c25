//! Flat binary checkpoint: `"DFCK"`, version, tensor count, then per tensor
//! name length + UTF-8 name, rank, dims and a little-endian f32 payload.
//! All integers are little-endian u32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

pub fn save_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    for nt in tensors {
        if !nt.tensor.is_finite() {
            return Err(Error::NonFinite { op: "save_checkpoint" });
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for nt in tensors {
        buf.extend_from_slice(&(nt.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(nt.name.as_bytes());
        buf.extend_from_slice(&(nt.tensor.rank() as u32).to_le_bytes());
        for &d in nt.tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in nt.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic, not a DFCK checkpoint"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(path, "tensor dims overflow"))?;
        let payload = c.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::format(path, "tensor dims overflow"))?,
        )?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)?;
        if !tensor.is_finite() {
            return Err(Error::format(path, format!("tensor {name} holds non-finite values")));
        }
        out.push(NamedTensor { name, tensor });
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(out)
}
