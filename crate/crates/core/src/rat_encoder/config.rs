use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema_graph::RelationMode;

/// Encoder widths and regularisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Model width `d_x = d_z`.
    pub d_x: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub dropout: f64,
    pub word_dim: usize,
    /// BiLSTM hidden size per direction; `2 * lstm_hidden` must equal `d_x`.
    pub lstm_hidden: usize,
    pub recurrent_dropout: f64,
    pub relation_mode: RelationMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl EncoderConfig {
    /// The published model size.
    pub fn full_scale() -> Self {
        EncoderConfig {
            d_x: 256,
            heads: 8,
            layers: 8,
            ff: 1024,
            dropout: 0.1,
            word_dim: 300,
            lstm_hidden: 128,
            recurrent_dropout: 0.2,
            relation_mode: RelationMode::Concat,
        }
    }

    /// A small model that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        EncoderConfig {
            d_x: 64,
            heads: 8,
            layers: 2,
            ff: 128,
            dropout: 0.1,
            word_dim: 32,
            lstm_hidden: 32,
            recurrent_dropout: 0.2,
            relation_mode: RelationMode::Concat,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_x / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("d_x", self.d_x),
            ("heads", self.heads),
            ("ff", self.ff),
            ("word_dim", self.word_dim),
            ("lstm_hidden", self.lstm_hidden),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be positive")));
            }
        }
        if self.d_x % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_x {} is not divisible by {} heads",
                self.d_x, self.heads
            )));
        }
        if 2 * self.lstm_hidden != self.d_x {
            return Err(Error::Config(format!(
                "BiLSTM output 2 x {} does not match d_x {}",
                self.lstm_hidden, self.d_x
            )));
        }
        for (name, p) in [("dropout", self.dropout), ("recurrent_dropout", self.recurrent_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        self.relation_mode.segments(self.head_dim())?;
        Ok(())
    }
}
