use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::config::EncoderConfig;
use super::layer::{rat_layer, RatLayerParams};
use super::lstm::BiLstmParams;
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{Graph, PairIndex, ParamId, ParamStore, Tensor, Var};
use crate::schema_graph::{QuestionTokens, RelationMatrix, Schema};

/// Projections of the memory-schema alignment, with their own relation keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignParams {
    pub wq_col: ParamId,
    pub wk_col: ParamId,
    pub wq_tab: ParamId,
    pub wk_tab: ParamId,
    /// Relation key table, `d_x` wide.
    pub rel_k: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub cfg: EncoderConfig,
    pub word_emb: ParamId,
    pub question_lstm: BiLstmParams,
    pub label_lstm: BiLstmParams,
    pub layers: Vec<RatLayerParams>,
    /// Relation embeddings shared by all heads and layers.
    pub rel_k: ParamId,
    pub rel_v: ParamId,
    pub align: AlignParams,
}

impl EncoderParams {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: EncoderConfig, vocab_size: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_x;
        let rows = cfg.relation_mode.table_rows();
        let word_emb = store.add_uniform("enc.word_emb", vocab_size, cfg.word_dim, 0.1, rng)?;
        let question_lstm = BiLstmParams::new(store, "enc.question_lstm", cfg.word_dim, cfg.lstm_hidden, rng)?;
        let label_lstm = BiLstmParams::new(store, "enc.label_lstm", cfg.word_dim, cfg.lstm_hidden, rng)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layers.push(RatLayerParams::new(store, &format!("enc.layer{l}"), d, cfg.ff, rng)?);
        }
        let rel_k = store.add_glorot("enc.rel_k", rows, cfg.head_dim(), rng)?;
        let rel_v = store.add_glorot("enc.rel_v", rows, cfg.head_dim(), rng)?;
        let align = AlignParams {
            wq_col: store.add_glorot("enc.align.wq_col", d, d, rng)?,
            wk_col: store.add_glorot("enc.align.wk_col", d, d, rng)?,
            wq_tab: store.add_glorot("enc.align.wq_tab", d, d, rng)?,
            wk_tab: store.add_glorot("enc.align.wk_tab", d, d, rng)?,
            rel_k: store.add_glorot("enc.align.rel_k", rows, d, rng)?,
        };
        Ok(EncoderParams {
            cfg,
            word_emb,
            question_lstm,
            label_lstm,
            layers,
            rel_k,
            rel_v,
            align,
        })
    }

    /// Looks the parameters up by name in a store built by [`EncoderParams::new`].
    pub fn from_store(store: &ParamStore, cfg: EncoderConfig) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
        };
        let lstm = |name: &str| -> Result<BiLstmParams> {
            let dir = |d: &str| -> Result<super::lstm::LstmParams> {
                Ok(super::lstm::LstmParams {
                    w: id(&format!("{name}.{d}.w"))?,
                    b: id(&format!("{name}.{d}.b"))?,
                    input: cfg.word_dim,
                    hidden: cfg.lstm_hidden,
                })
            };
            Ok(BiLstmParams {
                fwd: dir("fwd")?,
                bwd: dir("bwd")?,
            })
        };
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let p = |s: &str| id(&format!("enc.layer{l}.{s}"));
            layers.push(RatLayerParams {
                wq: p("wq")?,
                wk: p("wk")?,
                wv: p("wv")?,
                ln1_gain: p("ln1.gain")?,
                ln1_bias: p("ln1.bias")?,
                ff1_w: p("ff1.w")?,
                ff1_b: p("ff1.b")?,
                ff2_w: p("ff2.w")?,
                ff2_b: p("ff2.b")?,
                ln2_gain: p("ln2.gain")?,
                ln2_bias: p("ln2.bias")?,
            });
        }
        Ok(EncoderParams {
            cfg,
            word_emb: id("enc.word_emb")?,
            question_lstm: lstm("enc.question_lstm")?,
            label_lstm: lstm("enc.label_lstm")?,
            layers,
            rel_k: id("enc.rel_k")?,
            rel_v: id("enc.rel_v")?,
            align: AlignParams {
                wq_col: id("enc.align.wq_col")?,
                wk_col: id("enc.align.wk_col")?,
                wq_tab: id("enc.align.wq_tab")?,
                wk_tab: id("enc.align.wk_tab")?,
                rel_k: id("enc.align.rel_k")?,
            },
        })
    }
}

/// Everything the encoder needs about one example, precomputed once.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub question_ids: Vec<usize>,
    /// Column labels (type word first) followed by table labels, as word ids.
    pub labels: Vec<Vec<usize>>,
    pub num_columns: usize,
    pub num_tables: usize,
    pub relations: RelationMatrix,
    pub self_index: Arc<PairIndex>,
    pub align_col_index: Arc<PairIndex>,
    pub align_tab_index: Arc<PairIndex>,
}

impl EncoderInput {
    pub fn new(
        schema: &Schema,
        question: &QuestionTokens,
        relations: RelationMatrix,
        vocab: &Vocab,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        if question.is_empty() {
            return Err(Error::Config("question has no tokens".into()));
        }
        let nc = schema.num_columns();
        let nt = schema.num_tables();
        if relations.num_columns != nc || relations.num_tables != nt || relations.num_question != question.len() {
            return Err(Error::ShapeMismatch {
                op: "encoder_input",
                left: vec![nc, nt, question.len()],
                right: vec![relations.num_columns, relations.num_tables, relations.num_question],
            });
        }
        let mut labels: Vec<Vec<usize>> = schema.columns.iter().map(|c| vocab.ids(&c.label())).collect();
        labels.extend(schema.tables.iter().map(|t| vocab.ids(&t.words)));
        if let Some(i) = labels.iter().position(Vec::is_empty) {
            return Err(Error::Schema(format!("schema node {i} has an empty label")));
        }
        let ns = nc + nt;
        let n = relations.n();
        let mode = cfg.relation_mode;
        Ok(EncoderInput {
            question_ids: vocab.ids(&question.tokens),
            labels,
            num_columns: nc,
            num_tables: nt,
            self_index: relations.pair_index(mode, cfg.head_dim())?,
            align_col_index: Arc::new(relations.block_index(ns..n, 0..nc, mode, cfg.d_x)?),
            align_tab_index: Arc::new(relations.block_index(ns..n, nc..ns, mode, cfg.d_x)?),
            relations,
        })
    }

    pub fn num_question(&self) -> usize {
        self.question_ids.len()
    }
}

/// Graph handles to the final encodings and alignment matrices.
#[derive(Debug, Clone, Copy)]
pub struct EncoderState {
    pub columns: Var,
    pub tables: Var,
    pub question: Var,
    /// Memory the decoder attends over (the question-word encodings).
    pub memory: Var,
    /// Every final encoding, in node order.
    pub all: Var,
    pub l_col: Var,
    pub l_tab: Var,
}

/// Concrete encoder results, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub columns: Tensor,
    pub tables: Tensor,
    pub question: Tensor,
    pub l_col: Tensor,
    pub l_tab: Tensor,
}

impl EncoderState {
    pub fn to_output(&self, g: &Graph) -> EncoderOutput {
        EncoderOutput {
            columns: g.to_tensor(self.columns),
            tables: g.to_tensor(self.tables),
            question: g.to_tensor(self.question),
            l_col: g.to_tensor(self.l_col),
            l_tab: g.to_tensor(self.l_tab),
        }
    }
}

/// Initial encodings of the schema labels (final BiLSTM states) and of the
/// question (per-position BiLSTM outputs), stacked in node order.
pub fn initial_encodings(g: &mut Graph, p: &EncoderParams, input: &EncoderInput) -> Result<Var> {
    let emb = g.param(p.word_emb);
    let rd = p.cfg.recurrent_dropout;

    // Equal-length labels share one batched pass.
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in input.labels.iter().enumerate() {
        groups.entry(l.len()).or_default().push(i);
    }
    let mut parts = Vec::new();
    let mut order = Vec::with_capacity(input.labels.len());
    for (len, members) in &groups {
        let mut steps = Vec::with_capacity(*len);
        for t in 0..*len {
            let ids: Vec<usize> = members.iter().map(|&m| input.labels[m][t]).collect();
            steps.push(g.gather(emb, &ids)?);
        }
        parts.push(p.label_lstm.final_states(g, &steps, rd)?);
        order.extend(members.iter().copied());
    }
    let stacked = g.concat_rows(&parts)?;
    let mut inverse = vec![0; order.len()];
    for (pos, &node) in order.iter().enumerate() {
        inverse[node] = pos;
    }
    let schema = g.gather(stacked, &inverse)?;

    let words = g.gather(emb, &input.question_ids)?;
    let steps: Vec<Var> = (0..input.question_ids.len())
        .map(|t| g.row_of(words, t))
        .collect::<Result<_>>()?;
    let question = p.question_lstm.outputs(g, &steps, rd)?;
    g.concat_rows(&[schema, question])
}

/// Row-softmaxed alignment of every memory row against the columns and the tables.
pub fn alignment(
    g: &mut Graph,
    p: &AlignParams,
    memory: Var,
    columns: Var,
    tables: Var,
    col_index: &Arc<PairIndex>,
    tab_index: &Arc<PairIndex>,
) -> Result<(Var, Var)> {
    let d = g.shape(memory).1;
    if g.shape(memory).0 == 0 {
        return Err(Error::Config("alignment needs a non-empty memory".into()));
    }
    if g.shape(columns).0 == 0 {
        return Err(Error::Schema("alignment over a schema without columns".into()));
    }
    let rel = g.param(p.rel_k);
    let scale = 1.0 / (d as f64).sqrt();
    let one = |g: &mut Graph, wq: ParamId, wk: ParamId, items: Var, index: &Arc<PairIndex>| -> Result<Var> {
        let wq = g.param(wq);
        let wk = g.param(wk);
        let q = g.matmul(memory, wq)?;
        let k = g.matmul(items, wk)?;
        let plain = g.matmul_t(q, k)?;
        let r = g.rel_scores(q, rel, index)?;
        let s = g.add(plain, r)?;
        let s = g.scale(s, scale);
        g.softmax(s, None)
    };
    let l_col = one(g, p.wq_col, p.wk_col, columns, col_index)?;
    let l_tab = one(g, p.wq_tab, p.wk_tab, tables, tab_index)?;
    Ok((l_col, l_tab))
}

/// Full encoder: initial encodings, the relation-aware layers, and alignment.
pub fn encode(g: &mut Graph, p: &EncoderParams, input: &EncoderInput) -> Result<EncoderState> {
    if p.layers.is_empty() {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    let mut x = initial_encodings(g, p, input)?;
    let rel_k = g.param(p.rel_k);
    let rel_v = g.param(p.rel_v);
    for layer in &p.layers {
        x = rat_layer(g, x, layer, rel_k, rel_v, &input.self_index, p.cfg.heads, p.cfg.dropout)?.0;
    }
    let nc = input.num_columns;
    let nt = input.num_tables;
    let nq = input.num_question();
    let columns = g.slice_rows(x, 0, nc)?;
    let tables = g.slice_rows(x, nc, nt)?;
    let question = g.slice_rows(x, nc + nt, nq)?;
    let (l_col, l_tab) = alignment(
        g,
        &p.align,
        question,
        columns,
        tables,
        &input.align_col_index,
        &input.align_tab_index,
    )?;
    Ok(EncoderState {
        columns,
        tables,
        question,
        memory: question,
        all: x,
        l_col,
        l_tab,
    })
}
