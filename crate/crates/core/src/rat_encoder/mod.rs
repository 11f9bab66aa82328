//! Initial node encodings, relation-aware self-attention layers and the
//! memory-schema alignment matrices.

mod config;
mod encoder;
mod layer;
mod lstm;
mod vocab;

pub use config::EncoderConfig;
pub use encoder::{alignment, encode, initial_encodings, AlignParams, EncoderInput, EncoderOutput, EncoderParams, EncoderState};
pub use layer::{rat_layer, RatLayerParams};
pub use lstm::{BiLstmParams, LstmParams};
pub use vocab::{apply_pretrained, read_word_vectors, Vocab, UNK};
