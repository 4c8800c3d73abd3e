//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! | field        | type                                      |
//! |--------------|-------------------------------------------|
//! | magic        | `b"CMKP"`                                 |
//! | version      | `u32` (currently 1)                       |
//! | meta_len     | `u64`                                     |
//! | metadata     | `meta_len` bytes of UTF-8 JSON            |
//! | block_count  | `u32`                                     |
//! | blocks       | per block: `u64` length `n`, then `n` `f64` |
//! | checksum     | `u32` CRC-32 of every preceding byte      |
//!
//! Blocks hold each layer's parameter tensors in layer order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::{CoinModel, Geometry};
use crate::nn::{Layer, LayerSpec, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{EpochStats, TrainConfig};

pub const MAGIC: &[u8; 4] = b"CMKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    labels: Vec<String>,
    geometry: Geometry,
    layers: Vec<LayerSpec>,
    train_config: Option<TrainConfig>,
    history: Vec<EpochStats>,
}

/// A model plus the configuration and metrics of the run that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: CoinModel<T>,
    pub train_config: Option<TrainConfig>,
    pub history: Vec<EpochStats>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: CoinModel<T>) -> Self {
        Checkpoint {
            model,
            train_config: None,
            history: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            labels: self.model.labels.clone(),
            geometry: self.model.geometry,
            layers: self.model.network.specs(),
            train_config: self.train_config.clone(),
            history: self.history.clone(),
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let blocks: Vec<&Tensor<T>> =
            self.model.network.layers().iter().flat_map(|l| &l.params).collect();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for t in blocks {
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t.values() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let meta_len = r.len_u64()?;
        let meta_bytes = r.take(meta_len)?;
        let block_count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(block_count.min(1024));
        for _ in 0..block_count {
            let n = r.len_u64()?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| malformed("block length overflow"))?)?;
            blocks.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect::<Vec<f64>>(),
            );
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed }.into());
        }

        let meta: Metadata = serde_json::from_slice(meta_bytes)
            .map_err(|e| malformed(format!("metadata: {e}")))?;
        let mut blocks = blocks.into_iter();
        let mut layers = Vec::with_capacity(meta.layers.len());
        for spec in meta.layers {
            let mut params = Vec::new();
            for shape in spec.param_shapes() {
                let values = blocks
                    .next()
                    .ok_or_else(|| malformed("fewer weight blocks than layer parameters"))?;
                let values = values.into_iter().map(T::lit).collect();
                params.push(
                    Tensor::new(shape, values)
                        .map_err(|e| malformed(format!("weight block: {e}")))?,
                );
            }
            layers.push(Layer { spec, params });
        }
        if blocks.next().is_some() {
            return Err(malformed("more weight blocks than layer parameters").into());
        }
        let network = Network::from_layers(meta.geometry.input_shape(), layers)?;
        Ok(Checkpoint {
            model: CoinModel::new(network, meta.labels, meta.geometry)?,
            train_config: meta.train_config,
            history: meta.history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint<T: Scalar>(model: &CoinModel<T>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(model.clone()).save(path)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<CoinModel<T>> {
    Ok(Checkpoint::load(path)?.model)
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| malformed("length does not fit in memory"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Classifier;
    use crate::image::Image;

    fn model() -> CoinModel<f64> {
        CoinModel::build(
            vec!["a".into(), "b".into(), "c".into()],
            Geometry::default(),
            11,
        )
        .unwrap()
    }

    fn is<F: Fn(&CheckpointError) -> bool>(r: Result<Checkpoint<f64>>, f: F) -> bool {
        matches!(r, Err(Error::Checkpoint(ref e)) if f(e))
    }

    #[test]
    fn roundtrip_preserves_predictions_bitwise() {
        let m = model();
        let bytes = Checkpoint::new(m.clone()).to_bytes().unwrap();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.model, m);
        for k in 0..10 {
            let px = (0..1600).map(|i| ((i * 31 + k * 7) % 101) as f64 / 101.0).collect();
            let img = Image::new(40, 40, 1, px).unwrap();
            let a = m.predict_proba(&img).unwrap();
            let b = back.model.predict_proba(&img).unwrap();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn corrupted_weight_byte_fails_checksum() {
        let mut bytes = Checkpoint::new(model()).to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 100] ^= 0x40;
        assert!(is(Checkpoint::from_bytes(&bytes), |e| matches!(e, CheckpointError::Checksum { .. })));
    }

    #[test]
    fn version_and_magic_and_truncation_are_distinct() {
        let bytes = Checkpoint::new(model()).to_bytes().unwrap();
        let mut v = bytes.clone();
        v[4..8].copy_from_slice(&999u32.to_le_bytes());
        assert!(is(Checkpoint::from_bytes(&v), |e| matches!(e, CheckpointError::Version { found: 999, .. })));
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(is(Checkpoint::from_bytes(&m), |e| matches!(e, CheckpointError::BadMagic)));
        let t = &bytes[..bytes.len() - 50];
        assert!(is(Checkpoint::from_bytes(t), |e| matches!(e, CheckpointError::Truncated { .. })));
        assert!(is(Checkpoint::from_bytes(&bytes[..2]), |e| matches!(e, CheckpointError::Truncated { .. })));
    }

    #[test]
    fn f32_models_roundtrip() {
        let m = model().network.cast::<f32>();
        let m = CoinModel::new(m, vec!["a".into(), "b".into(), "c".into()], Geometry::default()).unwrap();
        let bytes = Checkpoint::new(m.clone()).to_bytes().unwrap();
        assert_eq!(Checkpoint::<f32>::from_bytes(&bytes).unwrap().model, m);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model(), &path).unwrap();
        assert_eq!(load_checkpoint::<f64>(&path).unwrap(), model());
        assert!(matches!(load_checkpoint::<f64>(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
