//! Self-describing container of named `f64` arrays.
//!
//! Layout (little endian):
//! `b"LCKP"`, `u32` version, `u32` metadata length, metadata JSON,
//! `u32` tensor count, then per tensor `u32` name length, name bytes,
//! `u32` rank, `u64` extents, raw `f64` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::layer::Parameterized;
use super::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"LCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

/// Which tensors a non-strict load copied and which it skipped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub copied: Vec<String>,
    pub skipped: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn from_model<P: Parameterized + ?Sized>(model: &P, metadata: BTreeMap<String, String>) -> Self {
        Self {
            metadata,
            tensors: model
                .named_params()
                .into_iter()
                .map(|(n, p)| (n, p.value.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies every model parameter from the checkpoint; any missing name or
    /// shape difference is an error.
    pub fn load_into<P: Parameterized + ?Sized>(&self, model: &mut P) -> Result<()> {
        for (name, p) in model.named_params_mut() {
            let t = self
                .get(&name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
            if t.shape() != p.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "{name}: checkpoint {:?} vs model {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Copies tensors whose name (after `strip_prefix`/`add_prefix`
    /// remapping) and shape match; everything else keeps its current value.
    pub fn transfer_into<P: Parameterized + ?Sized>(
        &self,
        model: &mut P,
        source_prefix: &str,
        target_prefix: &str,
    ) -> TransferReport {
        let mut report = TransferReport::default();
        for (name, p) in model.named_params_mut() {
            let Some(rest) = name.strip_prefix(target_prefix) else {
                report.skipped.push((name, "outside transfer scope".into()));
                continue;
            };
            let source = format!("{source_prefix}{rest}");
            match self.get(&source) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.value = t.clone();
                    info!("transferred {source} -> {name}");
                    report.copied.push(name);
                }
                Some(t) => {
                    let reason = format!("shape {:?} vs {:?}", t.shape(), p.value.shape());
                    warn!("skipped {name}: {reason}");
                    report.skipped.push((name, reason));
                }
                None => {
                    warn!("skipped {name}: no tensor {source}");
                    report.skipped.push((name, format!("no tensor {source}")));
                }
            }
        }
        report
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("tensor name: {e}")))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
