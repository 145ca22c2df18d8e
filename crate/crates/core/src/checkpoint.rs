//! Versioned JSON checkpoint files.
//!
//! A file carries the corpus context a model needs at prediction time
//! (vocabulary, decks, presentation vectors) and one of the supported
//! model kinds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusContext;
use crate::error::{Error, Result};
use crate::evaluation::{MajorityModel, Predictor};
use crate::model::{Example, ModelConfig, OpinionXfParams};
use crate::numerics::Tensor;
use crate::training::Checkpoint;

pub const FORMAT: &str = "opinionxf-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Opinionxf {
        config: ModelConfig,
        epoch: usize,
        val_loss: f64,
        val_macro_f1: f64,
        config_hash: String,
        params: Vec<NamedTensor>,
    },
    Majority {
        modal: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub context: CorpusContext,
    pub model: SavedModel,
}

/// A checkpoint ready for prediction.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    OpinionXf(Checkpoint),
    Majority(MajorityModel),
}

impl LoadedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::OpinionXf(_) => "opinionxf",
            LoadedModel::Majority(_) => "majority",
        }
    }
}

impl Predictor for LoadedModel {
    fn predict_ids(&self, examples: &[Example]) -> Result<Vec<Vec<usize>>> {
        match self {
            LoadedModel::OpinionXf(c) => c.params.predict_ids(examples),
            LoadedModel::Majority(m) => m.predict_ids(examples),
        }
    }
}

impl CheckpointFile {
    pub fn from_checkpoint(context: &CorpusContext, ck: &Checkpoint) -> Self {
        let params = ck
            .params
            .names()
            .iter()
            .zip(ck.params.tensors())
            .map(|(n, t)| NamedTensor {
                name: n.clone(),
                rows: t.rows(),
                cols: t.cols(),
                data: t.data().to_vec(),
            })
            .collect();
        Self::wrap(
            context,
            SavedModel::Opinionxf {
                config: ck.params.config().clone(),
                epoch: ck.epoch,
                val_loss: ck.val_loss,
                val_macro_f1: ck.val_macro_f1,
                config_hash: ck.config_hash.clone(),
                params,
            },
        )
    }

    pub fn from_majority(context: &CorpusContext, model: &MajorityModel) -> Self {
        Self::wrap(
            context,
            SavedModel::Majority {
                modal: model.modal.clone(),
            },
        )
    }

    fn wrap(context: &CorpusContext, model: SavedModel) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            context: context.clone(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(format!("checkpoint: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if file.format != FORMAT {
            return Err(Error::Format(format!("not a checkpoint file (format {:?})", file.format)));
        }
        if file.version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is not supported (expected {VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuild the model, validating shapes against the stored context.
    pub fn model(&self) -> Result<LoadedModel> {
        let sizes = self.context.vocab.sizes();
        match &self.model {
            SavedModel::Opinionxf {
                config,
                epoch,
                val_loss,
                val_macro_f1,
                config_hash,
                params,
            } => {
                if config.vocab_sizes != sizes {
                    return Err(Error::Format(
                        "checkpoint model and vocabulary disagree on answer counts".into(),
                    ));
                }
                let named = params
                    .iter()
                    .map(|p| Ok((p.name.clone(), Tensor::new(p.rows, p.cols, p.data.clone())?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(LoadedModel::OpinionXf(Checkpoint {
                    params: OpinionXfParams::from_named(config.clone(), named)?,
                    epoch: *epoch,
                    val_loss: *val_loss,
                    val_macro_f1: *val_macro_f1,
                    config_hash: config_hash.clone(),
                }))
            }
            SavedModel::Majority { modal } => {
                if modal.len() != sizes.len() || modal.iter().zip(&sizes).any(|(m, s)| m >= s) {
                    return Err(Error::Format("majority answers do not fit the vocabulary".into()));
                }
                Ok(LoadedModel::Majority(MajorityModel {
                    modal: modal.clone(),
                }))
            }
        }
    }
}
