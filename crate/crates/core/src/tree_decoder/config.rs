use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder widths and regularisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Width of rule and action embeddings.
    pub rule_dim: usize,
    /// Width of node-type embeddings.
    pub node_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Heads of the context attention over the encoder outputs.
    pub heads: usize,
    pub step_limit: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl DecoderConfig {
    pub fn full_scale() -> Self {
        DecoderConfig {
            rule_dim: 128,
            node_dim: 64,
            hidden: 512,
            dropout: 0.21,
            heads: 8,
            step_limit: 200,
        }
    }

    pub fn desk() -> Self {
        DecoderConfig {
            rule_dim: 32,
            node_dim: 16,
            hidden: 64,
            dropout: 0.21,
            heads: 8,
            step_limit: 200,
        }
    }

    pub fn validate(&self, d_x: usize) -> Result<()> {
        for (name, v) in [
            ("rule_dim", self.rule_dim),
            ("node_dim", self.node_dim),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("step_limit", self.step_limit),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("decoder {name} must be positive")));
            }
        }
        if d_x % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {d_x} is not divisible by {} decoder heads",
                self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("decoder dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
