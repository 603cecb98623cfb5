//! Checkpoint container.
//!
//! Layout: 8 magic bytes, `u32` LE format version, `u64` LE header length, a
//! JSON header (config, architecture, scaler, history and a tensor index of
//! name → shape/offset), then every tensor as raw little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ScalerManifest;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::genmodel::GenParams;
use crate::inference::InfParams;
use crate::model::{Architecture, Model};
use crate::tensor::{ParamStore, Tensor};
use crate::training::{HistoryRow, TrainConfig};

pub const MAGIC: &[u8; 8] = b"SQBLFCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub scaler: ScalerManifest,
    pub model: Model,
    pub history: Vec<HistoryRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    set: String,
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in values.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TrainConfig,
    arch: Architecture,
    scaler: ScalerManifest,
    history: Vec<HistoryRow>,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(config: TrainConfig, scaler: ScalerManifest, model: Model, history: Vec<HistoryRow>) -> Self {
        Self {
            version: FORMAT_VERSION,
            config,
            scaler,
            model,
            history,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut offset = 0;
        for (set, store) in [("gen", &self.model.gen.store), ("inf", &self.model.inf.store)] {
            for (name, t) in store.iter() {
                tensors.push(TensorEntry {
                    set: set.into(),
                    name: name.into(),
                    shape: t.shape().to_vec(),
                    offset,
                });
                offset += t.len();
                for v in t.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let header = Header {
            version: self.version,
            config: self.config.clone(),
            arch: self.model.arch.clone(),
            scaler: self.scaler.clone(),
            history: self.history.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| corrupt(format!("bad header: {e}")))?;
        let payload = &bytes[header_end..];
        if !payload.len().is_multiple_of(8) {
            return Err(corrupt("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut gen = ParamStore::new();
        let mut inf = ParamStore::new();
        let mut expected_offset = 0;
        for t in &header.tensors {
            let len: usize = t.shape.iter().product();
            if t.offset != expected_offset || t.offset + len > values.len() {
                return Err(corrupt(format!("tensor {} lies outside the payload", t.name)));
            }
            expected_offset += len;
            let tensor = Tensor::new(t.shape.clone(), values[t.offset..t.offset + len].to_vec())
                .map_err(|e| corrupt(format!("tensor {}: {e}", t.name)))?;
            match t.set.as_str() {
                "gen" => gen.add(t.name.clone(), tensor),
                "inf" => inf.add(t.name.clone(), tensor),
                other => return Err(corrupt(format!("unknown parameter set {other}"))),
            };
        }
        if expected_offset != values.len() {
            return Err(corrupt("payload has trailing values"));
        }
        let arch = header.arch;
        arch.validate()?;
        let model = Model {
            gen: GenParams::bind(&arch, gen)?,
            inf: InfParams::bind(&arch, inf)?,
            arch,
        };
        Ok(Self {
            version,
            config: header.config,
            scaler: header.scaler,
            model,
            history: header.history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
