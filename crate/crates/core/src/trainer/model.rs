use std::collections::BTreeMap;

use super::config::TrainConfig;
use super::loss::{align_loss, relevant_nodes};
use crate::dataset_io::{Corpus, Example};
use crate::error::Result;
use crate::numerics::{derive_rng, Graph, ParamStore, Var};
use crate::rat_encoder::{encode, EncoderInput, EncoderParams, EncoderState, Vocab};
use crate::schema_graph::{assemble_relation_matrix, QuestionTokens, Schema};
use crate::schema_linker::{name_link, value_link, ValueIndex};
use crate::sql_grammar::{Action, Grammar, SqlAst};
use crate::tree_decoder::{
    decode, teacher_forced_nll, DecoderContext, DecoderParams, Decoded, Oracle, SearchMode, TeacherForced,
};

/// Encoder and decoder weights with the vocabulary they were built for.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

/// An example turned into model inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub db_id: String,
    pub input: EncoderInput,
    pub ast: SqlAst,
    pub actions: Vec<Action>,
    pub rel_columns: Vec<usize>,
    pub rel_tables: Vec<usize>,
    pub question_len: usize,
    pub question: String,
}

/// Loss pieces of one example.
#[derive(Debug, Clone)]
pub struct ExampleLoss {
    pub total: Var,
    pub align: Option<Var>,
    pub teacher: TeacherForced,
}

/// Words of training questions and of the schemas they use.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Vocab {
    let mut words: Vec<&str> = Vec::new();
    let mut used: BTreeMap<&str, &Schema> = BTreeMap::new();
    for ex in &corpus.examples {
        words.extend(ex.question.tokens.iter().map(String::as_str));
        if let Some(s) = corpus.schemas.get(&ex.db_id) {
            used.insert(&ex.db_id, s);
        }
    }
    let mut labels = Vec::new();
    for s in used.values() {
        for c in &s.columns {
            labels.extend(c.label());
        }
        for t in &s.tables {
            labels.extend(t.words.iter().cloned());
        }
    }
    words.extend(labels.iter().map(String::as_str));
    Vocab::build(words, min_count)
}

impl Model {
    pub fn new(config: &TrainConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = derive_rng(config.seed, "init", 0);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, config.encoder, vocab.len(), &mut rng)?;
        let decoder = DecoderParams::new(&mut store, config.decoder, config.encoder.d_x, Grammar::shipped(), &mut rng)?;
        Ok(Model {
            config: config.clone(),
            vocab,
            store,
            encoder,
            decoder,
        })
    }

    pub fn prepare(&self, schema: &Schema, ex: &Example) -> Result<Prepared> {
        let relations = ex.relations_with(schema, self.config.ablation())?;
        let input = EncoderInput::new(schema, &ex.question, relations, &self.vocab, &self.config.encoder)?;
        let (rel_columns, rel_tables) = relevant_nodes(&ex.ast);
        Ok(Prepared {
            db_id: ex.db_id.clone(),
            input,
            ast: ex.ast.clone(),
            actions: ex.actions.clone(),
            rel_columns,
            rel_tables,
            question_len: ex.question.len(),
            question: ex.question.raw.clone(),
        })
    }

    pub fn prepare_corpus(&self, corpus: &Corpus) -> Result<Vec<Prepared>> {
        corpus
            .examples
            .iter()
            .map(|ex| self.prepare(corpus.schema(&ex.db_id)?, ex))
            .collect()
    }

    pub fn encode(&self, g: &mut Graph, p: &Prepared) -> Result<EncoderState> {
        encode(g, &self.encoder, &p.input)
    }

    /// Teacher-forced NLL plus the weighted alignment loss.
    pub fn loss(&self, g: &mut Graph, p: &Prepared) -> Result<ExampleLoss> {
        let enc = self.encode(g, p)?;
        let grammar = Grammar::shipped();
        let ctx = DecoderContext::new(g, &self.decoder, grammar, &enc)?;
        let teacher = teacher_forced_nll(g, &self.decoder, grammar, &ctx, &p.actions)?;
        let mut total = teacher.loss;
        let mut align = None;
        if self.config.align_weight > 0.0 {
            if let Some(a) = align_loss(g, enc.l_col, enc.l_tab, &p.rel_columns, &p.rel_tables)? {
                let weighted = g.scale(a, self.config.align_weight);
                total = g.add(total, weighted)?;
                align = Some(a);
            }
        }
        Ok(ExampleLoss { total, align, teacher })
    }

    /// Decodes in evaluation mode (no dropout).
    pub fn predict(&self, p: &Prepared, mode: SearchMode, oracle: Oracle) -> Result<Decoded> {
        let mut g = Graph::eval(&self.store);
        let enc = self.encode(&mut g, p)?;
        let grammar = Grammar::shipped();
        let ctx = DecoderContext::new(&mut g, &self.decoder, grammar, &enc)?;
        let gold = (oracle != Oracle::None).then_some(&p.ast);
        decode(&mut g, &self.decoder, grammar, &ctx, &p.db_id, mode, oracle, gold)
    }

    /// Encoder input for a question with no gold query.
    pub fn question_input(&self, schema: &Schema, values: Option<&ValueIndex>, question: &str) -> Result<EncoderInput> {
        let q = QuestionTokens::new(question, self.config.tokenizer);
        let links = name_link(&q, schema, self.config.linker);
        let value_links = values.map(|v| value_link(&q, v)).unwrap_or_default();
        let relations = assemble_relation_matrix(schema, &q, &links, &value_links, self.config.ablation())?;
        EncoderInput::new(schema, &q, relations, &self.vocab, &self.config.encoder)
    }

    /// Decodes a free-standing question.
    pub fn predict_question(
        &self,
        schema: &Schema,
        values: Option<&ValueIndex>,
        question: &str,
        mode: SearchMode,
    ) -> Result<Decoded> {
        let input = self.question_input(schema, values, question)?;
        let mut g = Graph::eval(&self.store);
        let enc = encode(&mut g, &self.encoder, &input)?;
        let grammar = Grammar::shipped();
        let ctx = DecoderContext::new(&mut g, &self.decoder, grammar, &enc)?;
        decode(&mut g, &self.decoder, grammar, &ctx, &schema.db_id, mode, Oracle::None, None)
    }
}
