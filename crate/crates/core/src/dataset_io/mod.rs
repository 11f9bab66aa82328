//! Spider-layout corpora, database snapshots and synthetic corpora.

mod example;
mod spider;
mod synthetic;

pub use example::{Corpus, Example, RawExample};
pub use spider::{
    load_schemas, load_spider, load_spider_with, read_examples_json, read_snapshot, value_indices,
    write_spider_layout, LoadOptions,
};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec, TemplateKind};
