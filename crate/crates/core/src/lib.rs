//! RAT-SQL: relation-aware schema encoding and linking for text-to-SQL.

pub mod dataset_io;
pub mod error;
pub mod cli;
pub mod evaluator;
pub mod fixtures;
pub mod numerics;
pub mod rat_encoder;
pub mod schema_graph;
pub mod schema_linker;
pub mod sql_grammar;
pub mod trainer;
pub mod tree_decoder;

pub use error::{Error, Result};
