use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::AdamState;
use crate::rat_encoder::Vocab;
use crate::sql_grammar::Grammar;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Hash of the shipped grammar text.
pub fn grammar_hash() -> String {
    use sha2::{Digest, Sha256};
    hex::encode(&Sha256::digest(Grammar::source().as_bytes())[..8])
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub dev_exact_match: Option<f64>,
    /// Share of teacher-forced steps where the gold action ranked first.
    pub action_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Best dev result seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub step: usize,
    pub dev_exact_match: f64,
}

/// Serialised training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub grammar_hash: String,
    pub config_hash: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub step: usize,
    pub vocab: Vocab,
    /// Fingerprints of the schemas seen in training, by database id.
    pub schemas: BTreeMap<String, String>,
    pub params: Vec<SavedParam>,
    pub optimizer: Option<AdamState>,
    pub metrics: Vec<MetricRecord>,
    pub best: Option<BestRecord>,
    pub evals_since_best: usize,
}

impl Checkpoint {
    pub fn params_of(model: &Model) -> Vec<SavedParam> {
        model
            .store
            .iter()
            .map(|(_, p)| SavedParam {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().to_vec(),
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        ck.vocab.reindex();
        Ok(ck)
    }

    /// Refuses checkpoints written for another format or grammar.
    pub fn check_versions(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                checkpoint: format!("checkpoint v{}", self.version),
                current: format!("checkpoint v{CHECKPOINT_VERSION}"),
            });
        }
        let current = grammar_hash();
        if self.grammar_hash != current {
            return Err(Error::VersionMismatch {
                checkpoint: format!("grammar {}", self.grammar_hash),
                current: format!("grammar {current}"),
            });
        }
        Ok(())
    }

    /// Rebuilds the model with the saved weights.
    pub fn to_model(&self) -> Result<Model> {
        self.check_versions()?;
        let mut model = Model::new(&self.config, self.vocab.clone())?;
        if model.store.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in &self.params {
            let id = model
                .store
                .id(&p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint parameter `{}` is unknown", p.name)))?;
            let t = model.store.get_mut(id);
            if t.shape() != p.shape.as_slice() || p.data.len() != t.numel() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    left: t.shape().to_vec(),
                    right: p.shape.clone(),
                });
            }
            t.data_mut().copy_from_slice(&p.data);
        }
        Ok(model)
    }
}
