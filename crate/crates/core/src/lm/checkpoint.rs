//! JSON checkpoints: a format tag and version, the model config, and every
//! parameter tensor by name with its shape.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{BiLm, Lm, Model};
use super::LmConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "extractive-compression/checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    /// `"lm"` or `"bilm"`.
    pub kind: String,
    pub config: LmConfig,
    pub tensors: Vec<TensorRecord>,
}

/// Models that can be written to and restored from a checkpoint.
pub trait Checkpoint: Model + Sized {
    const KIND: &'static str;
    fn init_from(config: &LmConfig) -> Result<Self>;
}

impl Checkpoint for Lm {
    const KIND: &'static str = "lm";
    fn init_from(config: &LmConfig) -> Result<Self> {
        Lm::init(config)
    }
}

impl Checkpoint for BiLm {
    const KIND: &'static str = "bilm";
    fn init_from(config: &LmConfig) -> Result<Self> {
        BiLm::init(config)
    }
}

pub fn save_checkpoint<M: Checkpoint>(model: &M, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        kind: M::KIND.to_string(),
        config: model.config().clone(),
        tensors: model
            .tensors()
            .into_iter()
            .map(|(name, data, shape)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<M: Checkpoint>(path: &Path) -> Result<M> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", file.version)));
    }
    if file.kind != M::KIND {
        return Err(Error::Checkpoint(format!("expected a {} checkpoint, found {}", M::KIND, file.kind)));
    }
    let mut model = M::init_from(&file.config)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .tensors()
        .into_iter()
        .map(|(n, _, s)| (n, s))
        .collect();
    if expected.len() != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            file.tensors.len()
        )));
    }
    for ((slot, (name, shape)), rec) in model.tensors_mut().into_iter().zip(&expected).zip(&file.tensors) {
        if &rec.name != name || &rec.shape != shape || rec.data.len() != slot.len() {
            return Err(Error::Checkpoint(format!("tensor {} does not match {name} {shape:?}", rec.name)));
        }
        if rec.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor {name} has non-finite values")));
        }
        slot.copy_from_slice(&rec.data);
    }
    Ok(model)
}
