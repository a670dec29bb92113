//! Versioned binary parameter blobs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "ECGSSLCK"
//! version      u32
//! meta_len     u32, followed by meta_len bytes of UTF-8 metadata
//! n_tensors    u32
//! per tensor   u32 ndim, then ndim x u64 dims
//! payload      every tensor's values as f64, in order
//! ```

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ECGSSLCK";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(meta: &str, tensors: &[Tensor]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|t| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(32 + meta.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for t in tensors {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Returns the metadata string and the tensors.
pub fn decode(bytes: &[u8]) -> Result<(String, Vec<Tensor>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = String::from_utf8(r.take(meta_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let n = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let ndim = r.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(dims);
    }
    let mut tensors = Vec::with_capacity(n);
    for shape in shapes {
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((meta, tensors))
}
