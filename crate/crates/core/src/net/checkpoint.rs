//! JSON checkpoints: configuration, seed and every named tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "spex-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetConfig,
    pub seed: u64,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let tensors = model
            .layout()
            .tensors()
            .iter()
            .map(|t| StoredTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: model.params[t.range()].to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: *model.config(),
            seed: model.seed,
            tensors,
        }
    }

    /// Rebuild the model, checking every tensor's name and shape.
    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut model = Model::new_uninit(self.config, self.seed)?;
        let specs = model.layout().tensors().to_vec();
        if specs.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (spec, stored) in specs.iter().zip(self.tensors) {
            if spec.name != stored.name || spec.shape != stored.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    stored.name, stored.shape, spec.name, spec.shape
                )));
            }
            if stored.data.len() != spec.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} holds {} values, shape needs {}",
                    stored.name,
                    stored.data.len(),
                    spec.len()
                )));
            }
            model.params[spec.range()].copy_from_slice(&stored.data);
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&Checkpoint::from_model(model)).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    // write then rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    ckpt.into_model()
}
