//! Binary checkpoint container. All integers and floats are little-endian:
//!
//! ```text
//! magic    8 bytes  "RLEMPCCK"
//! version  u32
//! seed     u64
//! topology u32 length + UTF-8
//! metadata u32 length + UTF-8
//! blocks   u32 count, then per block:
//!          name u32 length + UTF-8, len u64, len × f64
//! ```

use std::fs;
use std::path::Path;

use super::{Adam, Network};
use crate::error::CheckpointError;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"RLEMPCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub topology: String,
    /// Free-form text, e.g. the serialized run configuration.
    pub metadata: String,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(seed: u64, topology: impl Into<String>, metadata: impl Into<String>) -> Self {
        Self { seed, topology: topology.into(), metadata: metadata.into(), blocks: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) {
        self.blocks.push((name.into(), values.to_vec()));
    }

    pub fn push_network(&mut self, prefix: &str, net: &Network) {
        for (name, p) in net.blocks() {
            self.push(format!("{prefix}.{name}"), &p.value);
        }
    }

    pub fn push_adam(&mut self, prefix: &str, adam: &Adam, net: &Network) {
        self.push(format!("{prefix}.t"), &[adam.step_count as f64]);
        for ((name, _), (m, v)) in net.blocks().iter().zip(adam.m.iter().zip(&adam.v)) {
            self.push(format!("{prefix}.m.{name}"), m);
            self.push(format!("{prefix}.v.{name}"), v);
        }
    }

    pub fn block(&self, name: &str) -> Result<&[f64], CheckpointError> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice()).ok_or_else(|| CheckpointError::MissingBlock(name.to_string()))
    }

    fn sized_block(&self, name: &str, expected: usize) -> Result<&[f64], CheckpointError> {
        let v = self.block(name)?;
        if v.len() != expected {
            return Err(CheckpointError::BlockSize { name: name.to_string(), expected, found: v.len() });
        }
        Ok(v)
    }

    /// Copies the blocks under `prefix` into `net`. Every block is validated
    /// before anything is written.
    pub fn load_network(&self, prefix: &str, net: &mut Network) -> Result<(), CheckpointError> {
        let mut values = Vec::new();
        for (name, p) in net.blocks() {
            values.push(self.sized_block(&format!("{prefix}.{name}"), p.value.len())?.to_vec());
        }
        for ((_, p), v) in net.blocks_mut().into_iter().zip(values) {
            p.value = v;
            p.grad.fill(0.0);
        }
        Ok(())
    }

    pub fn load_adam(&self, prefix: &str, adam: &mut Adam, net: &Network) -> Result<(), CheckpointError> {
        let t = self.sized_block(&format!("{prefix}.t"), 1)?[0];
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, p) in net.blocks() {
            m.push(self.sized_block(&format!("{prefix}.m.{name}"), p.value.len())?.to_vec());
            v.push(self.sized_block(&format!("{prefix}.v.{name}"), p.value.len())?.to_vec());
        }
        adam.step_count = t as u64;
        adam.m = m;
        adam.v = v;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_str(&mut out, &self.topology);
        put_str(&mut out, &self.metadata);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, values) in &self.blocks {
            put_str(&mut out, name);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic").ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let seed = r.u64("seed")?;
        let topology = r.string("topology")?;
        let metadata = r.string("metadata")?;
        let count = r.u32("block count")?;
        let mut blocks: Vec<(String, Vec<f64>)> = Vec::new();
        for _ in 0..count {
            let at = r.pos;
            let name = r.string("block name")?;
            if blocks.iter().any(|(n, _)| *n == name) {
                return Err(CheckpointError::Corrupt { offset: at, reason: format!("duplicate block `{name}`") });
            }
            let len = r.u64("block length")? as usize;
            let raw = r.take(len.checked_mul(8).unwrap_or(usize::MAX), "block values")?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            blocks.push((name, values));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt { offset: r.pos, reason: "trailing bytes".into() });
        }
        Ok(Self { seed, topology, metadata, blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| CheckpointError::Corrupt {
            offset: self.pos,
            reason: format!("truncated while reading {what} ({n} bytes needed, {} left)", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Corrupt { offset: at, reason: format!("{what} is not UTF-8") })
    }
}
