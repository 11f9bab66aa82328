//! Training: loss, learning-rate schedule, batching and checkpoints.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod model;
mod schedule;
mod train;

pub use checkpoint::{grammar_hash, BestRecord, Checkpoint, MetricRecord, SavedParam, CHECKPOINT_VERSION};
pub use config::{TrainConfig, CONFIG_VERSION};
pub use gradcheck::{gradcheck_config, run_gradchecks};
pub use loss::{align_loss, relevant_nodes};
pub use model::{build_vocab, ExampleLoss, Model, Prepared};
pub use schedule::lr_at;
pub use train::{exact_match_rate, train, StepRecord, TrainOutcome, Trainer};
