//! Versioned JSON checkpoints.
//!
//! ```text
//! { "format": "ulcast-checkpoint", "version": 1,
//!   "spec": {...}, "normalizer": {...}, "history": [...],
//!   "params": [ { "name": "...", "shape": [...], "data": [...] }, ... ] }
//! ```
//!
//! Floats are written with round-trip precision, so a reloaded model
//! predicts bit-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::models::{EpochStats, Model, ModelSpec, TrainedModel};
use crate::tensor::Tensor;

pub const FORMAT: &str = "ulcast-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: ModelSpec,
    normalizer: Normalizer,
    history: Vec<EpochStats>,
    params: Vec<NamedTensor>,
}

pub fn to_json(model: &TrainedModel) -> String {
    let ck = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        spec: model.spec().clone(),
        normalizer: model.normalizer().clone(),
        history: model.history().to_vec(),
        params: model
            .model()
            .params()
            .iter()
            .map(|(name, t)| NamedTensor { name: name.to_string(), tensor: t.clone() })
            .collect(),
    };
    let mut s = serde_json::to_string(&ck).expect("checkpoint is serializable");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<TrainedModel> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed: {e}")))?;
    if ck.format != FORMAT {
        return Err(Error::Checkpoint(format!("not a checkpoint (format {:?})", ck.format)));
    }
    if ck.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {} (expected {VERSION})", ck.version)));
    }
    let mut model = Model::build(ck.spec)?;
    let store = model.params_mut();
    if store.len() != ck.params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            store.len(),
            ck.params.len()
        )));
    }
    for (i, p) in ck.params.into_iter().enumerate() {
        let expected = &store.names()[i];
        if *expected != p.name {
            return Err(Error::Checkpoint(format!("parameter {i} is {:?}, expected {expected:?}", p.name)));
        }
        let slot = &mut store.tensors_mut()[i];
        if slot.shape() != p.tensor.shape() || p.tensor.numel() != p.tensor.data().len() {
            return Err(Error::Checkpoint(format!(
                "parameter {:?} has shape {:?}, expected {:?}",
                p.name,
                p.tensor.shape(),
                slot.shape()
            )));
        }
        *slot = p.tensor;
    }
    TrainedModel::new(model, ck.normalizer, ck.history)
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(model)).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    from_json(&text)
}
