use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("compute graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("index out of range: {what} {index} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported SQL syntax at {start}..{end}: {message}")]
    UnsupportedSyntax {
        start: usize,
        end: usize,
        message: String,
    },

    #[error("SQL parse error at {pos}: {message}")]
    SqlParse { pos: usize, message: String },

    #[error("cannot resolve identifier `{0}`")]
    Resolution(String),

    #[error("invalid AST: {0}")]
    InvalidAst(String),

    #[error("grammar error: {0}")]
    Grammar(String),

    #[error("decoder: {0}")]
    Decode(String),

    #[error("decoding exceeded {limit} steps ({emitted} actions emitted)")]
    StepLimit { limit: usize, emitted: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("version mismatch: checkpoint {checkpoint} vs current {current}")]
    VersionMismatch { checkpoint: String, current: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
