//! Grammar-constrained tree decoder with parent feeding and a pointer over
//! the schema composed with the memory-schema alignment.

mod config;
mod model;
mod search;

pub use config::DecoderConfig;
pub use model::{
    action_embedding, action_log_probs, action_position, context, initial_cell, pointer_probs, step, Cell,
    DecoderContext, DecoderParams, StepInput,
};
pub use search::{
    action_name, decode, next_distribution, teacher_forced_nll, Decoded, DecoderState, Oracle, SearchMode,
    TeacherForced, TraceAlternative, TraceStep,
};
