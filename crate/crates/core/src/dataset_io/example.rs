use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema_graph::{
    assemble_relation_matrix, LinkMatrix, QuestionTokens, RelationAblation, RelationMatrix, Schema, TokenizerConfig,
};
use crate::schema_linker::{name_link, value_link, LinkerConfig, ValueIndex};
use crate::sql_grammar::{linearize, parse_sql, Action, Grammar, SqlAst};

/// One entry of a Spider-layout example file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub db_id: String,
    pub question: String,
    pub query: String,
    /// Generator annotations such as `value` or `join`; absent in Spider.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

/// A parsed example with its links and relation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub db_id: String,
    pub question: QuestionTokens,
    pub sql: String,
    pub ast: SqlAst,
    pub actions: Vec<Action>,
    pub links: LinkMatrix,
    pub value_links: BTreeSet<(usize, usize)>,
    pub relations: RelationMatrix,
    pub tags: Vec<String>,
}

impl Example {
    pub fn from_raw(
        raw: &RawExample,
        schema: &Schema,
        values: Option<&ValueIndex>,
        tokenizer: TokenizerConfig,
        linker: LinkerConfig,
    ) -> Result<Self> {
        if raw.db_id != schema.db_id {
            return Err(Error::Schema(format!(
                "example for `{}` paired with schema `{}`",
                raw.db_id, schema.db_id
            )));
        }
        let question = QuestionTokens::new(&raw.question, tokenizer);
        if question.is_empty() {
            return Err(Error::Config(format!("question `{}` has no tokens", raw.question)));
        }
        let ast = parse_sql(&raw.query, schema)?;
        let actions = linearize(Grammar::shipped(), &ast)?;
        let links = name_link(&question, schema, linker);
        let value_links = values.map(|v| value_link(&question, v)).unwrap_or_default();
        let relations = assemble_relation_matrix(schema, &question, &links, &value_links, RelationAblation::default())?;
        Ok(Example {
            db_id: raw.db_id.clone(),
            question,
            sql: raw.query.clone(),
            ast,
            actions,
            links,
            value_links,
            relations,
            tags: raw.tags.clone(),
        })
    }

    /// Relation matrix with some relation families removed.
    pub fn relations_with(&self, schema: &Schema, ablation: RelationAblation) -> Result<RelationMatrix> {
        if ablation == RelationAblation::default() {
            return Ok(self.relations.clone());
        }
        assemble_relation_matrix(schema, &self.question, &self.links, &self.value_links, ablation)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

/// Schemas, value indices and the examples of one split.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub schemas: BTreeMap<String, Schema>,
    pub values: BTreeMap<String, ValueIndex>,
    pub examples: Vec<Example>,
    /// Examples dropped because their SQL is outside the grammar.
    pub skipped: usize,
}

impl Corpus {
    pub fn schema(&self, db_id: &str) -> Result<&Schema> {
        self.schemas
            .get(db_id)
            .ok_or_else(|| Error::Schema(format!("unknown database `{db_id}`")))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Fraction of input examples that were skipped.
    pub fn skip_rate(&self) -> f64 {
        let total = self.examples.len() + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }

    /// A corpus over the same schemas holding only `examples`.
    pub fn with_examples(&self, examples: Vec<Example>) -> Corpus {
        Corpus {
            schemas: self.schemas.clone(),
            values: self.values.clone(),
            examples,
            skipped: 0,
        }
    }
}
