//! Model, optimizer moments and fitted pre-processing saved as a directory
//! of WFM1 tensors plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Components, ModelConfig, VitModel};
use crate::signal::{read_tensor, write_tensor, Dtype, FittedPipeline};
use crate::tensor::{ParameterStore, Tensor};
use crate::train::{Adam, Moments};

pub const CHECKPOINT_FORMAT: &str = "wfm-checkpoint/1";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub checksum: u64,
    pub trainable: bool,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub model: ModelConfig,
    pub parts: Components,
    pub epoch: usize,
    pub step: usize,
    /// Completed optimizer updates.
    pub adam_t: u64,
    #[serde(default)]
    pub pipeline: Option<FittedPipeline>,
    /// Evaluation summary recorded when the checkpoint was written.
    #[serde(default)]
    pub metrics: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParameterStore,
    pub moments: IndexMap<String, Moments>,
}

/// What to persist besides the parameters.
#[derive(Debug, Clone, Default)]
pub struct CheckpointExtras<'a> {
    pub adam: Option<&'a Adam>,
    pub epoch: usize,
    pub step: usize,
    pub pipeline: Option<&'a FittedPipeline>,
    pub metrics: Option<serde_json::Value>,
}

fn tensor_file(name: &str, suffix: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("tensors/{safe}{suffix}.wfm")
}

/// Writes into a sibling temporary directory and renames it into place, so
/// an interrupted save never replaces a complete checkpoint.
pub fn save_checkpoint(dir: &Path, model: &VitModel, extras: CheckpointExtras) -> Result<CheckpointMeta> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(tmp.join("tensors")).map_err(|e| Error::io(&tmp, e))?;
    let mut entries = Vec::with_capacity(model.params.len());
    for (name, t) in model.params.iter() {
        let file = tensor_file(name, "");
        write_tensor(&tmp.join(&file), t, Dtype::F64)?;
        let moments = match extras.adam.and_then(|a| a.moments.get(name)) {
            Some(m) => {
                let files = [tensor_file(name, ".m"), tensor_file(name, ".v")];
                for (f, v) in files.iter().zip([&m.m, &m.v]) {
                    write_tensor(&tmp.join(f), &Tensor::new(t.shape().to_vec(), v.clone())?, Dtype::F64)?;
                }
                Some(files)
            }
            None => None,
        };
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            checksum: t.checksum(),
            trainable: t.requires_grad(),
            file,
            moments,
        });
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        model: model.config.clone(),
        parts: model.parts.clone(),
        epoch: extras.epoch,
        step: extras.step,
        adam_t: extras.adam.map_or(0, |a| a.t),
        pipeline: extras.pipeline.cloned(),
        metrics: extras.metrics,
        tensors: entries,
    };
    let path = tmp.join(CHECKPOINT_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(meta)
}

fn corrupt(path: PathBuf, reason: impl Into<String>) -> Error {
    Error::Corrupt {
        path,
        reason: reason.into(),
    }
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(CHECKPOINT_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes).map_err(|e| corrupt(path.clone(), e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(corrupt(path, format!("unknown format `{}`", meta.format)));
    }
    let mut params = ParameterStore::new();
    let mut moments = IndexMap::new();
    for e in &meta.tensors {
        let file = dir.join(&e.file);
        let mut t = read_tensor(&file)?;
        if t.shape() != e.shape.as_slice() {
            return Err(corrupt(file, format!("shape {:?}, manifest says {:?}", t.shape(), e.shape)));
        }
        if t.checksum() != e.checksum {
            return Err(corrupt(file, format!("checksum mismatch for `{}`", e.name)));
        }
        t.set_requires_grad(e.trainable);
        if let Some([m, v]) = &e.moments {
            let m = read_tensor(&dir.join(m))?;
            let v = read_tensor(&dir.join(v))?;
            if m.numel() != t.numel() || v.numel() != t.numel() {
                return Err(corrupt(dir.to_path_buf(), format!("moments of `{}` have the wrong size", e.name)));
            }
            moments.insert(e.name.clone(), Moments {
                m: m.into_data(),
                v: v.into_data(),
            });
        }
        params.insert(e.name.clone(), t);
    }
    Ok(Checkpoint { meta, params, moments })
}

impl Checkpoint {
    /// Model with the architecture recorded in the checkpoint.
    pub fn model(&self) -> Result<VitModel> {
        VitModel::from_params(self.meta.model.clone(), self.meta.parts.clone(), self.params.clone())
    }

    /// Loads the tensors into a caller-chosen architecture; a mismatch names
    /// the first offending tensor.
    pub fn model_with(&self, config: &ModelConfig) -> Result<VitModel> {
        VitModel::from_params(config.clone(), self.meta.parts.clone(), self.params.clone())
    }

    /// Restores optimizer state saved alongside the parameters.
    pub fn restore_adam(&self, adam: &mut Adam) {
        adam.t = self.meta.adam_t;
        adam.moments = self.moments.clone();
    }
}
