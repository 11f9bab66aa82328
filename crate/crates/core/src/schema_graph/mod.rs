//! Schemas, questions, the schema graph and the relation matrix.

mod graph;
mod relations;
mod schema;
mod tokenize;

pub use graph::{build_schema_graph, clip, NodeRef, SchemaEdge, SchemaGraph};
pub use relations::{
    assemble_relation_matrix, LinkMatrix, MatchLevel, NodeKind, Relation, RelationAblation,
    RelationLabel, RelationMatrix, RelationMode, MAX_QUESTION_DIST, NUM_PAIR_TYPES,
};
pub use schema::{
    read_tables_json, Column, ColumnSpec, ColumnType, LoadedSchema, PrimaryKeyJson, Schema,
    SpiderSchemaJson, Table,
};
pub use tokenize::{canonical_number, normalize_words, strip_plural, QuestionTokens, TokenizerConfig};
