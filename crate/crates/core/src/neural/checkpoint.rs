//! Binary checkpoint container.
//!
//! Layout: magic `WCKP`, `u32` version, `u32` parameter count, then per
//! parameter a `u8` group code, `u32` name length, UTF-8 name, `u32` rank,
//! `u32` dimensions, and the `f32` payload. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{ParamGroup, ParamStore};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ParamStore {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 4 * self.n_values());
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for p in self.params() {
            b.push(p.group.code());
            b.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            b.extend_from_slice(p.name.as_bytes());
            b.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                b.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        b
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let n = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let code = r.take(1)?[0];
            let group = ParamGroup::from_code(code).ok_or_else(|| format!("unknown group code {code}"))?;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?.to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(format!("parameter {name} has implausible rank {rank}"));
            }
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<_, _>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflow")?;
            let payload = r.take(count.checked_mul(4).ok_or("shape overflow")?)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
            if store.position(&name).is_some() {
                return Err(format!("duplicate parameter {name}"));
            }
            store.insert(group, name, Tensor::new(shape, data));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(store)
    }

    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_checkpoint(path: &Path) -> Result<ParamStore> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ParamStore::from_checkpoint_bytes(&bytes).map_err(|r| Error::format(path, r))
    }

    /// Replace the values of this store by a checkpoint of identical layout.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let other = ParamStore::read_checkpoint(path)?;
        self.assign_from(&other)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
