use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ratsql", version, about = "Relation-aware text-to-SQL parser")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file. `gen-synthetic` reads a corpus spec, every other
    /// command a training config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Corpus directory in Spider layout (`tables.json`, splits, `database/`).
    #[arg(long, global = true, env = "RATSQL_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// Parent of the per-run output directories.
    #[arg(long, global = true, env = "RATSQL_RUNS_DIR", default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Exact output directory instead of a fresh run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel evaluation workers.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphFormat {
    Dot,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleArg {
    None,
    Sketch,
    Columns,
    Both,
}

#[derive(Debug, Args)]
pub struct SchemaSource {
    /// Database id.
    #[arg(long, required_unless_present = "example_db")]
    pub db: Option<String>,
    /// Schema file; defaults to `<data-dir>/tables.json`.
    #[arg(long)]
    pub tables: Option<PathBuf>,
    /// Use the bundled `car_1` example database instead of a schema file.
    #[arg(long)]
    pub example_db: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Beam width; 1 decodes greedily.
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the schema graph of one database.
    Graph {
        #[command(flatten)]
        source: SchemaSource,
        #[arg(long, value_enum, default_value_t = GraphFormat::Dot)]
        format: GraphFormat,
    },
    /// Show schema and value links and the relation matrix for one question.
    Link {
        #[command(flatten)]
        source: SchemaSource,
        #[arg(long)]
        question: String,
    },
    /// Write a synthetic corpus in Spider layout.
    GenSynthetic {
        #[arg(long)]
        schemas: Option<usize>,
        #[arg(long)]
        dev_schemas: Option<usize>,
        #[arg(long)]
        tables: Option<usize>,
        #[arg(long)]
        columns: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        dev_examples: Option<usize>,
        #[arg(long)]
        value_fraction: Option<f64>,
        #[arg(long)]
        paraphrase_dev: bool,
        #[arg(long)]
        implicit_tables: bool,
    },
    /// Train a model; writes checkpoints and a metrics log.
    Train {
        #[arg(long, default_value = "train.json")]
        train: String,
        #[arg(long, default_value = "dev.json")]
        dev: String,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        align_weight: Option<f64>,
        #[arg(long)]
        no_linking: bool,
        #[arg(long)]
        no_graph: bool,
        #[arg(long)]
        no_value_linking: bool,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate questions to SQL. Input is a JSON list of `{db_id, question}`
    /// or lines of `db_id<TAB>question`.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Exact-match evaluation of a checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "dev.json")]
        split: String,
        #[arg(long, value_enum, default_value_t = OracleArg::None)]
        oracle: OracleArg,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Evaluation under oracle modes; all four unless `--oracle` is given.
    /// Without a checkpoint an untrained model is built from the config.
    OracleEval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "dev.json")]
        split: String,
        #[arg(long, value_enum)]
        oracle: Option<OracleArg>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// Per-element relative error bound.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Graph { .. } => "graph",
            Command::Link { .. } => "link",
            Command::GenSynthetic { .. } => "gen-synthetic",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::OracleEval { .. } => "oracle-eval",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}
