//! Bit-exact checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "USEA"
//! version  u32      1
//! count    u64      number of entries
//! entry*   name_len u32, name utf-8,
//!          dtype    u8 (0 = 32-bit IEEE real),
//!          rank     u8,
//!          extents  u64 x rank,
//!          payload  4 * prod(extents) bytes, little-endian f32
//! ```
//!
//! Entries are sorted by name. Save followed by load is bit-identical.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"USEA";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn serialize(store: &ParameterStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, param) in store.iter() {
        if name.is_empty() {
            return Err(Error::Format("empty parameter name".into()));
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        let shape = param.tensor.shape();
        out.push(shape.len() as u8);
        for &e in shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in param.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(store: &ParameterStore<f32>, path: &Path) -> Result<()> {
    fs::write(path, serialize(store)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                expected: (self.pos + n) as u64,
                got: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<ParameterStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let count = r.u64()?;
    let mut store = ParameterStore::new();
    let mut prev_name: Option<String> = None;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not valid UTF-8".into()))?
            .to_string();
        if name.is_empty() {
            return Err(Error::Format("empty parameter name".into()));
        }
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(Error::Format(format!(
                    "entries not sorted by name: {prev:?} before {name:?}"
                )));
            }
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let rank = r.u8()? as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::Format(format!("rank {rank} outside 1..=4 for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = r.u64()?;
            if e == 0 {
                return Err(Error::Format(format!("zero extent in {name}")));
            }
            shape.push(e as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.take(4 * numel)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name.clone(), Tensor::new(shape, data)?);
        prev_name = Some(name);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore<f32>> {
    let bytes = fs::read(path)?;
    deserialize(&bytes)
}
