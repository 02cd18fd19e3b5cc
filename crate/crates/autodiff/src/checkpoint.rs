//! ILVC checkpoints: `"ILVC"`, u32 record count, then per parameter in
//! store order: u32 name length, UTF-8 name, u32 rank, u32 × rank extents,
//! f32 × numel values. Little-endian throughout.

use std::fs;
use std::path::Path;

use crate::error::{AdError, AdResult};
use crate::params::ParamStore;

pub const MAGIC: [u8; 4] = *b"ILVC";

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape.len() as u32).to_le_bytes());
        for &d in &p.value.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.value.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> AdResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(AdError::Checkpoint(format!("truncated at byte {}", self.buf.len())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> AdResult<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Overwrite the values of `store` from a checkpoint with exactly the same
/// names and shapes in the same order. Optimizer state is reset.
pub fn decode_into(store: &mut ParamStore, buf: &[u8]) -> AdResult<()> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(AdError::Checkpoint("bad magic".into()));
    }
    let n = r.u32()?;
    if n != store.len() {
        return Err(AdError::Checkpoint(format!("{n} records for {} parameters", store.len())));
    }
    let mut values = Vec::with_capacity(n);
    for p in store.iter() {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| AdError::Checkpoint("name is not UTF-8".into()))?;
        if name != p.name {
            return Err(AdError::Checkpoint(format!("expected parameter {:?}, found {name:?}", p.name)));
        }
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<AdResult<Vec<_>>>()?;
        if shape != p.value.shape {
            return Err(AdError::Checkpoint(format!("{name}: shape {shape:?}, expected {:?}", p.value.shape)));
        }
        let bytes = r.take(4 * p.value.numel())?;
        values.push(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect::<Vec<_>>());
    }
    if r.pos != buf.len() {
        return Err(AdError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    for (p, v) in store.iter_mut().zip(values) {
        p.value.data = v;
        p.m.iter_mut().for_each(|x| *x = 0.0);
        p.v.iter_mut().for_each(|x| *x = 0.0);
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> AdResult<()> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn load_into(store: &mut ParamStore, path: impl AsRef<Path>) -> AdResult<()> {
    decode_into(store, &fs::read(path)?)
}
