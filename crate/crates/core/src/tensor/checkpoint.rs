//! Binary checkpoint: `RFFSCKPT` magic, `u32` version, `u64` header length,
//! a JSON header naming every array with its shape and byte offset, then
//! the little-endian `f32` payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFFSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamState<T>>,
    /// Free-form metadata (architecture, training progress).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    params: Vec<ArrayEntry>,
    optimizer: Option<OptimizerHeader>,
    /// First and second moments, in parameter order.
    moments: Vec<ArrayEntry>,
    meta: serde_json::Value,
    payload_bytes: usize,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &[T]| {
            let offset = payload.len();
            for v in data {
                payload.extend_from_slice(&v.as_f32().to_le_bytes());
            }
            ArrayEntry { name, shape, offset }
        };
        let params: Vec<ArrayEntry> = self
            .params
            .iter()
            .map(|(_, name, t)| push(name.to_string(), t.shape().to_vec(), t.data()))
            .collect();
        let mut moments = Vec::new();
        if let Some(opt) = &self.optimizer {
            for (which, arrays) in [("m", &opt.m), ("v", &opt.v)] {
                for ((_, name, t), a) in self.params.iter().zip(arrays) {
                    moments.push(push(format!("{which}:{name}"), t.shape().to_vec(), a));
                }
            }
        }
        let header = Header {
            params,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
            moments,
            meta: self.meta.clone(),
            payload_bytes: payload.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(Error::Checkpoint(format!(
                "truncated header: {} of {hlen} bytes",
                body.len()
            )));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        if payload.len() != header.payload_bytes {
            return Err(Error::Checkpoint(format!(
                "payload size {} does not match header ({})",
                payload.len(),
                header.payload_bytes
            )));
        }
        let read = |e: &ArrayEntry| -> Result<Tensor<T>> {
            let n: usize = e.shape.iter().product();
            let end = e.offset + 4 * n;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("array {} exceeds payload", e.name)));
            }
            let data = payload[e.offset..end]
                .chunks_exact(4)
                .map(|b| T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                .collect();
            Tensor::new(e.shape.clone(), data)
        };
        let mut params = ParamStore::new();
        for e in &header.params {
            params.insert(e.name.clone(), read(e)?);
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let n = params.len();
                if header.moments.len() != 2 * n {
                    return Err(Error::Checkpoint("optimizer moments missing".into()));
                }
                let arrays = header
                    .moments
                    .iter()
                    .map(|e| read(e).map(Tensor::into_data))
                    .collect::<Result<Vec<_>>>()?;
                let (m, v) = arrays.split_at(n);
                Some(AdamState {
                    config: o.config,
                    step: o.step,
                    m: m.to_vec(),
                    v: v.to_vec(),
                })
            }
        };
        Ok(Self {
            params,
            optimizer,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

/// Reads a whole checkpoint; nothing is returned unless every array is intact.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
