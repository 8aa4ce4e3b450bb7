//! JSON checkpoint for a trained (or vanilla) model.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::classifier::ClassifierParams;
use super::encoder::EncoderParams;
use super::losses::{LossConfig, LossKind};
use super::train::{TrainConfig, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "frameforge-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub loss: LossConfig,
    /// Absent for the vanilla model.
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub encoder: EncoderParams,
    pub classifier: Option<ClassifierParams>,
    pub classes: Vec<String>,
    pub adacos_scale: Option<f64>,
    pub epoch_losses: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel, train: Option<&TrainConfig>, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            loss: model.loss,
            train: train.copied(),
            seed,
            encoder: model.encoder.clone(),
            classifier: model.classifier.clone(),
            classes: model.classes.clone(),
            adacos_scale: model.adacos_scale,
            epoch_losses: model.epoch_losses.clone(),
        }
    }

    pub fn into_model(self) -> TrainedModel {
        TrainedModel {
            loss: self.loss,
            encoder: self.encoder,
            classifier: self.classifier,
            classes: self.classes,
            adacos_scale: self.adacos_scale,
            epoch_losses: self.epoch_losses,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format {:?}", self.format)));
        }
        self.encoder.validate()?;
        match (&self.classifier, self.loss.kind.uses_classifier()) {
            (Some(cls), true) => {
                cls.validate()?;
                if cls.dim() != self.encoder.d_out() || cls.num_classes() != self.classes.len() {
                    return Err(Error::Config("classifier shape disagrees with encoder/classes".into()));
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Config(format!("{} checkpoint carries a classifier", self.loss.kind)))
            }
            (None, true) => {
                return Err(Error::Config(format!("{} checkpoint lacks a classifier", self.loss.kind)))
            }
        }
        if self.loss.kind == LossKind::AdaCos
            && !self.adacos_scale.is_some_and(|s| s.is_finite() && s > 0.0)
        {
            return Err(Error::Config("adacos checkpoint needs a positive scale".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
    ck.validate()?;
    Ok(ck)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

/// Hex SHA-256 of the serialized checkpoint.
pub fn checkpoint_hash(ck: &Checkpoint) -> String {
    hex::encode(Sha256::digest(ck.to_json().as_bytes()))
}
