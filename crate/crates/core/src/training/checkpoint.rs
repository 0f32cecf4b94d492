//! Checkpoint files: `"ETSV"`, `u32` version, `u32` header length, JSON
//! header, then the tensors as raw little-endian `f64` in header order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::History;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{EcgModel, EncoderConfig, Head, HeadConfig, HeadSpec, IsdHead, ModelKind, Trunk};
use crate::mtlr::TimeGrid;
use crate::nn::{Dense, Module, StateMut, StateRef};
use crate::rng::rng_for;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ETSV";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Trainable,
    Frozen,
    /// Non-trainable state, e.g. batch-norm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub role: TensorRole,
    pub tensor: Tensor,
}

/// A model's architecture, every named tensor, and its training history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub encoder_config: EncoderConfig,
    pub head_config: HeadConfig,
    pub head: HeadSpec,
    pub grid: Option<TimeGrid>,
    pub tensors: Vec<NamedTensor>,
    pub history: History,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: TensorRole,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    encoder_config: EncoderConfig,
    head_config: HeadConfig,
    head: HeadSpec,
    grid: Option<TimeGrid>,
    tensors: Vec<TensorEntry>,
    history: History,
}

impl Checkpoint {
    pub fn from_model(model: &EcgModel, history: History) -> Self {
        let mut tensors = Vec::new();
        model.visit("", &mut |name, s| {
            let (role, tensor) = match s {
                StateRef::Param(p) if p.frozen => (TensorRole::Frozen, &p.value),
                StateRef::Param(p) => (TensorRole::Trainable, &p.value),
                StateRef::Buffer(b) => (TensorRole::Buffer, b),
            };
            tensors.push(NamedTensor {
                name: name.to_string(),
                role,
                tensor: tensor.clone(),
            });
        });
        Self {
            kind: model.kind,
            encoder_config: model.encoder_config.clone(),
            head_config: model.head_config,
            head: model.head.spec(),
            grid: model.grid().cloned(),
            tensors,
            history,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    /// Rebuilds the model with the stored values and freeze flags.
    pub fn to_model(&self) -> Result<EcgModel> {
        // values are overwritten below, so the initializer seed is irrelevant
        let mut rng = rng_for(0, &[]);
        let trunk = Trunk::new(&self.encoder_config, &mut rng)?;
        let width = trunk.width();
        let head = match self.head {
            HeadSpec::Sigmoid { outputs } => Head::Sigmoid {
                out: Dense::new(width, outputs, &mut rng),
            },
            HeadSpec::Transfer { hidden } => Head::transfer(width, hidden, &mut rng),
            HeadSpec::Isd { hidden, grid_len } => {
                let grid = self
                    .grid
                    .clone()
                    .ok_or_else(|| CheckpointError::Header("ISD head without a time grid".into()))?;
                if grid.len() != grid_len {
                    return Err(CheckpointError::Header(format!(
                        "grid has {} points, head expects {grid_len}",
                        grid.len()
                    ))
                    .into());
                }
                Head::Isd(IsdHead::new(width, hidden, grid, &mut rng))
            }
        };
        let mut model = EcgModel {
            kind: self.kind,
            encoder_config: self.encoder_config.clone(),
            head_config: self.head_config,
            trunk,
            head,
        };
        let mut stored: HashMap<&str, &NamedTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut err: Option<CheckpointError> = None;
        model.visit_mut("", &mut |name, s| {
            if err.is_some() {
                return;
            }
            let Some(t) = stored.remove(name) else {
                err = Some(CheckpointError::MissingTensor(name.to_string()));
                return;
            };
            let target = match s {
                StateMut::Param(p) => {
                    p.frozen = t.role == TensorRole::Frozen;
                    &mut p.value
                }
                StateMut::Buffer(b) => b,
            };
            if target.shape() != t.tensor.shape() {
                err = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: target.shape().to_vec(),
                    found: t.tensor.shape().to_vec(),
                });
                return;
            }
            target.data_mut().copy_from_slice(t.tensor.data());
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        if let Some(extra) = stored.keys().next() {
            return Err(CheckpointError::Header(format!("unexpected tensor {extra}")).into());
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    role: t.role,
                    shape: t.tensor.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.tensor.len() as u64;
                e
            })
            .collect();
        let header = Header {
            kind: self.kind,
            encoder_config: self.encoder_config.clone(),
            head_config: self.head_config,
            head: self.head,
            grid: self.grid.clone(),
            tensors: entries,
            history: self.history.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let header_len = u32::try_from(json.len())
            .map_err(|_| CheckpointError::Header("header exceeds 4 GiB".into()))?;
        let mut out = Vec::with_capacity(12 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: bytes[..bytes.len().min(4)].to_vec(),
            }
            .into());
        }
        let word = |at: usize| -> std::result::Result<u32, CheckpointError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| CheckpointError::Truncated("file ends inside the preamble".into()))
        };
        let version = word(4)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            }
            .into());
        }
        let header_len = word(8)? as usize;
        let payload_start = 12 + header_len;
        let json = bytes
            .get(12..payload_start)
            .ok_or_else(|| CheckpointError::Truncated("file ends inside the header".into()))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let payload = &bytes[payload_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_end = 0usize;
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            let raw = payload.get(start..end).ok_or_else(|| {
                CheckpointError::Truncated(format!(
                    "payload of {} needs bytes {start}..{end}, file has {}",
                    e.name,
                    payload.len()
                ))
            })?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            expected_end = expected_end.max(end);
            tensors.push(NamedTensor {
                name: e.name,
                role: e.role,
                tensor: Tensor::new(e.shape, data)?,
            });
        }
        if payload.len() != expected_end {
            return Err(CheckpointError::Header(format!(
                "payload has {} bytes, header describes {expected_end}",
                payload.len()
            ))
            .into());
        }
        Ok(Self {
            kind: header.kind,
            encoder_config: header.encoder_config,
            head_config: header.head_config,
            head: header.head,
            grid: header.grid,
            tensors,
            history: header.history,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
