//! Binary checkpoint container.
//!
//! Layout: `PTBM`, a version byte, a little-endian `u32` header length, a
//! JSON header, then every tensor as little-endian `f64` in header order.
//! Tensor names are the parameter names, `<name>/adam_m` and `<name>/adam_v`
//! for optimizer moments, and `best/<name>` for the best-validation snapshot.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BestSnapshot, EpochStats, Model, ModelConfig, ModelError, TrainConfig, TrainState};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTBM";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor {name:?} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint lacks tensor {0:?}")]
    MissingTensor(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset within the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Progress {
    step: u64,
    history: Vec<EpochStats>,
    best: Option<BestMeta>,
}

#[derive(Serialize, Deserialize)]
struct BestMeta {
    epoch: usize,
    val_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    train: Option<TrainConfig>,
    progress: Option<Progress>,
    tensors: Vec<TensorEntry>,
}

/// A restored model and, if it was saved mid-training, the trainer state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainState>,
}

impl Checkpoint {
    /// The best-validation model when one was recorded, else the final one.
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        if let Some(best) = self.train.as_ref().and_then(|t| t.best.as_ref()) {
            m.params.set_values(&best.values).expect("shapes checked on load");
        }
        m
    }
}

pub fn to_bytes(model: &Model, train: Option<&TrainState>) -> Vec<u8> {
    let mut tensors: Vec<(String, &Tensor)> = Vec::new();
    for p in model.params.iter() {
        tensors.push((p.name.clone(), &p.value));
    }
    if train.is_some() {
        for p in model.params.iter() {
            tensors.push((format!("{}/adam_m", p.name), &p.m));
            tensors.push((format!("{}/adam_v", p.name), &p.v));
        }
    }
    if let Some(best) = train.and_then(|t| t.best.as_ref()) {
        for (p, v) in model.params.iter().zip(&best.values) {
            tensors.push((format!("best/{}", p.name), v));
        }
    }
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len() * 8;
            e
        })
        .collect();
    let header = Header {
        config: model.config.clone(),
        train: train.map(|t| t.config.clone()),
        progress: train.map(|t| Progress {
            step: t.step,
            history: t.history.clone(),
            best: t.best.as_ref().map(|b| BestMeta {
                epoch: b.epoch,
                val_accuracy: b.val_accuracy,
            }),
        }),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(9 + json.len() + offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = *bytes
        .get(4)
        .ok_or_else(|| CheckpointError::Truncated("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len_bytes: [u8; 4] = bytes
        .get(5..9)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CheckpointError::Truncated("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes
        .get(9..9 + header_len)
        .ok_or_else(|| CheckpointError::Truncated("header cut short".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)?;
    let payload = &bytes[9 + header_len..];

    let table: HashMap<&str, &TensorEntry> = header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    let read = |name: &str, expected: &[usize]| -> Result<Tensor, CheckpointError> {
        let e = table
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if e.shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: e.shape.clone(),
            });
        }
        let n: usize = e.shape.iter().product();
        let raw = payload
            .get(e.offset..e.offset + 8 * n)
            .ok_or_else(|| CheckpointError::Truncated(format!("payload of {name:?} cut short")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor::new(e.shape.clone(), data).map_err(ModelError::from)?)
    };

    let mut model = Model::build(header.config)?;
    let names: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|p| (p.name.clone(), p.shape().to_vec()))
        .collect();
    for (p, (name, shape)) in model.params.as_mut_slice().iter_mut().zip(&names) {
        p.value = read(name, shape)?;
    }
    let train = match (header.train, header.progress) {
        (Some(config), Some(progress)) => {
            for (p, (name, shape)) in model.params.as_mut_slice().iter_mut().zip(&names) {
                p.m = read(&format!("{name}/adam_m"), shape)?;
                p.v = read(&format!("{name}/adam_v"), shape)?;
            }
            let best = match progress.best {
                Some(meta) => Some(BestSnapshot {
                    epoch: meta.epoch,
                    val_accuracy: meta.val_accuracy,
                    values: names
                        .iter()
                        .map(|(name, shape)| read(&format!("best/{name}"), shape))
                        .collect::<Result<_, _>>()?,
                }),
                None => None,
            };
            Some(TrainState {
                config,
                step: progress.step,
                history: progress.history,
                best,
            })
        }
        _ => None,
    };
    Ok(Checkpoint { model, train })
}

/// Writes atomically; `train` adds optimizer moments and progress.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    train: Option<&TrainState>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    crate::io::write_atomic(path, &to_bytes(model, train)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
