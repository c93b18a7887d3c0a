//! Binary checkpoint container.
//!
//! ```text
//! "LSCK" u32 version
//! u32 len, JSON {"model": ModelConfig, "train": TrainConfig}
//! u32 count, then per tensor: u32 name len, name, u32 rank, u32 dims.., f32 data..
//! u64 optimizer step, u32 count, then per tensor: u32 name len, name, u32 len, f32 m.., f32 v..
//! u64 seed, u64 epoch
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const MAGIC: &[u8; 4] = b"LSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub name: String,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tensors: Vec<NamedTensor>,
    pub optimizer_step: u64,
    pub moments: Vec<MomentState>,
    pub seed: u64,
    pub epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
                Error::Format(format!("checkpoint truncated while reading {what} at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format(format!("{what} too large")))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_string(&Header { model: self.model.clone(), train: self.train.clone() })
            .expect("config serialises");
        put_str(&mut out, &header);
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            put_u32(&mut out, t.dims.len());
            for &d in &t.dims {
                put_u32(&mut out, d);
            }
            put_f32s(&mut out, &t.data);
        }
        out.extend_from_slice(&self.optimizer_step.to_le_bytes());
        put_u32(&mut out, self.moments.len());
        for m in &self.moments {
            put_str(&mut out, &m.name);
            put_u32(&mut out, m.m.len());
            put_f32s(&mut out, &m.m);
            put_f32s(&mut out, &m.v);
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32("version")? as u32;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let header: Header =
            serde_json::from_str(&r.string("config")?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let rank = r.u32("rank")?;
            let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
            let data = r.f32s(dims.iter().product(), &name)?;
            tensors.push(NamedTensor { name, dims, data });
        }
        let optimizer_step = r.u64("optimizer step")?;
        let count = r.u32("moment count")?;
        let mut moments = Vec::new();
        for _ in 0..count {
            let name = r.string("moment name")?;
            let n = r.u32("moment length")?;
            let m = r.f32s(n, &name)?;
            let v = r.f32s(n, &name)?;
            moments.push(MomentState { name, m, v });
        }
        let seed = r.u64("seed")?;
        let epoch = r.u64("epoch")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Self { model: header.model, train: header.train, tensors, optimizer_step, moments, seed, epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::ingest::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
