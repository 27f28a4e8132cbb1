//! Checkpoints: `checkpoint.json` (architecture, step, optimizer settings,
//! tensor index) next to `weights.bin`.
//!
//! Blob layout, little-endian: `SSTW`, u32 tensor count, then per tensor
//! u32 name length, UTF-8 name, u8 trainable flag, u32 rank, u64 dims,
//! f32 payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::optim::AdamWConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "checkpoint.json";
pub const BLOB: &str = "weights.bin";
const MAGIC: &[u8; 4] = b"SSTW";
const FORMAT: &str = "sstfill-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub arch: ModelConfig,
    pub step: u64,
    pub optimizer: AdamWConfig,
    /// Caller-defined metadata (normalization, sample layout, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
    pub blob: String,
    pub blob_sha256: String,
    pub tensors: Vec<TensorInfo>,
}

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for e in store.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.trainable as u8);
        out.extend_from_slice(&(e.value.shape().len() as u32).to_le_bytes());
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.value.data() {
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
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated weight blob".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_params(buf: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let trainable = r.take(1)?[0] != 0;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store.add(name, Tensor::new(&shape, data)?, trainable);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes in weight blob".into()));
    }
    Ok(store)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Checkpoint;

impl Checkpoint {
    pub fn save(
        dir: impl AsRef<Path>,
        model: &Model,
        step: u64,
        optimizer: AdamWConfig,
        extra: serde_json::Value,
    ) -> Result<CheckpointManifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blob = encode_params(&model.params);
        let manifest = CheckpointManifest {
            format: FORMAT.into(),
            arch: model.config().clone(),
            step,
            optimizer,
            extra,
            blob: BLOB.into(),
            blob_sha256: hex(&Sha256::digest(&blob)),
            tensors: model
                .params
                .entries()
                .iter()
                .map(|e| TensorInfo {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    trainable: e.trainable,
                })
                .collect(),
        };
        let bp = dir.join(BLOB);
        fs::write(&bp, &blob).map_err(|e| Error::io(&bp, e))?;
        let mp = dir.join(MANIFEST);
        fs::write(&mp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
        Ok(manifest)
    }

    pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
        let mp = dir.as_ref().join(MANIFEST);
        let text = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: CheckpointManifest = serde_json::from_slice(&text)?;
        if m.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", m.format)));
        }
        Ok(m)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Model, CheckpointManifest)> {
        let dir = dir.as_ref();
        let manifest = Self::read_manifest(dir)?;
        let bp = dir.join(&manifest.blob);
        let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        if hex(&Sha256::digest(&blob)) != manifest.blob_sha256 {
            return Err(Error::Checkpoint(format!("{} does not match its hash", bp.display())));
        }
        let stored = decode_params(&blob)?;
        let mut model = Model::new(manifest.arch.clone(), 0)?;
        model.params.copy_from(&stored)?;
        Ok((model, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(&[2, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0]).unwrap(), true);
        s.add("b", Tensor::full(&[3], 7.0), false);
        let bytes = encode_params(&s);
        assert_eq!(&bytes[..4], b"SSTW");
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.value(0).data()[1].to_bits(), (-0.0f32).to_bits());
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
    }
}
