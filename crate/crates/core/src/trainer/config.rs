use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rat_encoder::EncoderConfig;
use crate::schema_graph::{RelationAblation, TokenizerConfig};
use crate::schema_linker::LinkerConfig;
use crate::tree_decoder::DecoderConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub version: u32,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub tokenizer: TokenizerConfig,
    pub linker: LinkerConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub peak_lr: f64,
    /// Coefficient of the annealing phase.
    pub final_lr_coef: f64,
    /// Weight of the alignment loss; 0 disables it.
    pub align_weight: f64,
    pub disable_schema_linking_relations: bool,
    pub disable_schema_graph_relations: bool,
    pub disable_value_linking: bool,
    pub clip_norm: f64,
    /// Dev evaluation period in steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Dev evaluations without improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub min_word_count: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        TrainConfig {
            version: CONFIG_VERSION,
            encoder: EncoderConfig::full_scale(),
            decoder: DecoderConfig::full_scale(),
            tokenizer: TokenizerConfig::default(),
            linker: LinkerConfig::default(),
            batch_size: 20,
            max_steps: 40000,
            peak_lr: 7.4e-4,
            final_lr_coef: 1e-3,
            align_weight: 0.0,
            disable_schema_linking_relations: false,
            disable_schema_graph_relations: false,
            disable_value_linking: false,
            clip_norm: 5.0,
            eval_every: 500,
            patience: 0,
            min_word_count: 1,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            encoder: EncoderConfig::desk(),
            decoder: DecoderConfig::desk(),
            batch_size: 8,
            max_steps: 5000,
            patience: 4,
            ..Self::full_scale()
        }
    }

    pub fn warmup_steps(&self) -> usize {
        self.max_steps / 20
    }

    pub fn ablation(&self) -> RelationAblation {
        RelationAblation {
            no_linking: self.disable_schema_linking_relations,
            no_schema_graph: self.disable_schema_graph_relations,
            no_value_linking: self.disable_value_linking,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                checkpoint: format!("config v{}", self.version),
                current: format!("config v{CONFIG_VERSION}"),
            });
        }
        self.encoder.validate()?;
        self.decoder.validate(self.encoder.d_x)?;
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::Config("batch_size and max_steps must be positive".into()));
        }
        if !(self.align_weight >= 0.0) {
            return Err(Error::Config(format!("align_weight {} must be ≥ 0", self.align_weight)));
        }
        if !(self.peak_lr > 0.0 && self.final_lr_coef >= 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rates and clip norm must be positive".into()));
        }
        Ok(())
    }

    /// Short content hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
