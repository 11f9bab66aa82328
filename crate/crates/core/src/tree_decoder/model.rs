use rand::Rng;

use super::config::DecoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Var};
use crate::rat_encoder::{EncoderState, LstmParams};
use crate::sql_grammar::{Action, Grammar, KindId, Terminal};

/// Decoder weights. Names start with `dec.`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub cfg: DecoderConfig,
    pub d_x: usize,
    pub rule_emb: ParamId,
    pub node_emb: ParamId,
    /// Projections of column / table encodings into action-embedding space.
    pub col_action: ParamId,
    pub tab_action: ParamId,
    pub lstm: LstmParams,
    pub h0: ParamId,
    pub m0: ParamId,
    /// Sentinels for the action before the first step and the root's parent.
    pub a0: ParamId,
    pub root_h: ParamId,
    pub root_a: ParamId,
    pub att_q: ParamId,
    pub att_k: ParamId,
    pub att_v: ParamId,
    pub rule_w1: ParamId,
    pub rule_b1: ParamId,
    pub rule_w2: ParamId,
    pub rule_b2: ParamId,
    pub col_q: ParamId,
    pub col_k: ParamId,
    pub tab_q: ParamId,
    pub tab_k: ParamId,
}

impl DecoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cfg: DecoderConfig,
        d_x: usize,
        grammar: &Grammar,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate(d_x)?;
        let (r, n, h) = (cfg.rule_dim, cfg.node_dim, cfg.hidden);
        let np = grammar.num_productions();
        let input = r + d_x + h + r + n;
        Ok(DecoderParams {
            cfg,
            d_x,
            rule_emb: store.add_uniform("dec.rule_emb", np, r, 0.1, rng)?,
            node_emb: store.add_uniform("dec.node_emb", grammar.num_kinds(), n, 0.1, rng)?,
            col_action: store.add_glorot("dec.col_action", d_x, r, rng)?,
            tab_action: store.add_glorot("dec.tab_action", d_x, r, rng)?,
            lstm: LstmParams::new(store, "dec.lstm", input, h, rng)?,
            h0: store.add_uniform("dec.h0", 1, h, 0.1, rng)?,
            m0: store.add_uniform("dec.m0", 1, h, 0.1, rng)?,
            a0: store.add_uniform("dec.a0", 1, r, 0.1, rng)?,
            root_h: store.add_uniform("dec.root_h", 1, h, 0.1, rng)?,
            root_a: store.add_uniform("dec.root_a", 1, r, 0.1, rng)?,
            att_q: store.add_glorot("dec.att.wq", h, d_x, rng)?,
            att_k: store.add_glorot("dec.att.wk", d_x, d_x, rng)?,
            att_v: store.add_glorot("dec.att.wv", d_x, d_x, rng)?,
            rule_w1: store.add_glorot("dec.rule.w1", h, r, rng)?,
            rule_b1: store.add_const("dec.rule.b1", 1, r, 0.0)?,
            rule_w2: store.add_glorot("dec.rule.w2", r, np, rng)?,
            rule_b2: store.add_const("dec.rule.b2", 1, np, 0.0)?,
            col_q: store.add_glorot("dec.ptr_col.wq", h, d_x, rng)?,
            col_k: store.add_glorot("dec.ptr_col.wk", d_x, d_x, rng)?,
            tab_q: store.add_glorot("dec.ptr_tab.wq", h, d_x, rng)?,
            tab_k: store.add_glorot("dec.ptr_tab.wk", d_x, d_x, rng)?,
        })
    }
}

/// Per-example projections of the encoder output, computed once per decode.
#[derive(Debug, Clone)]
pub struct DecoderContext {
    pub num_columns: usize,
    pub num_tables: usize,
    pub(crate) keys: Var,
    pub(crate) values: Var,
    pub(crate) col_keys: Var,
    pub(crate) tab_keys: Var,
    pub(crate) col_actions: Var,
    pub(crate) tab_actions: Var,
    pub(crate) l_col: Var,
    pub(crate) l_tab: Var,
    x_mask: Option<Vec<f64>>,
    h_mask: Option<Vec<f64>>,
    rule_masks: Vec<Vec<bool>>,
}

impl DecoderContext {
    pub fn new(g: &mut Graph, p: &DecoderParams, grammar: &Grammar, enc: &EncoderState) -> Result<Self> {
        let d = g.shape(enc.all).1;
        if d != p.d_x {
            return Err(Error::ShapeMismatch {
                op: "decoder_context",
                left: vec![p.d_x],
                right: vec![d],
            });
        }
        let num_columns = g.shape(enc.columns).0;
        let num_tables = g.shape(enc.tables).0;
        let (wk, wv) = (g.param(p.att_k), g.param(p.att_v));
        let keys = g.matmul(enc.all, wk)?;
        let values = g.matmul(enc.all, wv)?;
        let (ck, tk) = (g.param(p.col_k), g.param(p.tab_k));
        let col_keys = g.matmul(enc.memory, ck)?;
        let tab_keys = g.matmul(enc.memory, tk)?;
        let (ca, ta) = (g.param(p.col_action), g.param(p.tab_action));
        let col_actions = g.matmul(enc.columns, ca)?;
        let tab_actions = g.matmul(enc.tables, ta)?;
        let input = p.lstm.input;
        let x_mask = g.dropout_mask(1, input, p.cfg.dropout);
        let h_mask = g.dropout_mask(1, p.cfg.hidden, p.cfg.dropout);
        let np = grammar.num_productions();
        let rule_masks = grammar
            .kinds()
            .iter()
            .map(|k| {
                let mut m = vec![false; np];
                for pr in &k.productions {
                    m[pr.0] = true;
                }
                m
            })
            .collect();
        Ok(DecoderContext {
            num_columns,
            num_tables,
            keys,
            values,
            col_keys,
            tab_keys,
            col_actions,
            tab_actions,
            l_col: enc.l_col,
            l_tab: enc.l_tab,
            x_mask,
            h_mask,
            rule_masks,
        })
    }

    /// Actions available at a slot of `kind`, in distribution order.
    pub fn candidates(&self, grammar: &Grammar, kind: KindId) -> Vec<Action> {
        let k = grammar.kind(kind);
        match k.terminal {
            Some(Terminal::Column) => (0..self.num_columns).map(Action::SelectColumn).collect(),
            Some(Terminal::Table) => (0..self.num_tables).map(Action::SelectTable).collect(),
            None => k.productions.iter().map(|&p| Action::ApplyRule(p)).collect(),
        }
    }
}

/// Position of `action` in the distribution returned by [`action_log_probs`].
pub fn action_position(action: Action) -> usize {
    match action {
        Action::ApplyRule(p) => p.0,
        Action::SelectColumn(c) => c,
        Action::SelectTable(t) => t,
    }
}

/// Recurrent state after a step.
#[derive(Debug, Clone, Copy)]
pub struct Cell {
    pub h: Var,
    pub m: Var,
}

/// Inputs of one LSTM step besides the previous cell.
#[derive(Debug, Clone, Copy)]
pub struct StepInput {
    pub prev_action: Var,
    pub parent_h: Var,
    pub parent_action: Var,
    pub kind: KindId,
}

pub fn initial_cell(g: &mut Graph, p: &DecoderParams) -> Cell {
    Cell {
        h: g.param(p.h0),
        m: g.param(p.m0),
    }
}

/// Multi-head attention of `h` over the encoder outputs.
pub fn context(g: &mut Graph, p: &DecoderParams, ctx: &DecoderContext, h: Var) -> Result<Var> {
    let wq = g.param(p.att_q);
    let q = g.matmul(h, wq)?;
    let heads = p.cfg.heads;
    let dh = p.d_x / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut parts = Vec::with_capacity(heads);
    for k in 0..heads {
        let qh = g.slice_cols(q, k * dh, dh)?;
        let kh = g.slice_cols(ctx.keys, k * dh, dh)?;
        let vh = g.slice_cols(ctx.values, k * dh, dh)?;
        let e = g.matmul_t(qh, kh)?;
        let e = g.scale(e, scale);
        let a = g.softmax(e, None)?;
        parts.push(g.mix(a, vh)?);
    }
    g.concat_cols(&parts)
}

/// `m_t, h_t = LSTM([a_{t-1} ∥ z_t ∥ h_p ∥ a_p ∥ n_f], (h_{t-1}, m_{t-1}))`
pub fn step(g: &mut Graph, p: &DecoderParams, ctx: &DecoderContext, prev: Cell, input: StepInput) -> Result<Cell> {
    let z = context(g, p, ctx, prev.h)?;
    let node_table = g.param(p.node_emb);
    let node = g.gather(node_table, &[input.kind.0])?;
    let x = g.concat_cols(&[input.prev_action, z, input.parent_h, input.parent_action, node])?;
    let x = match &ctx.x_mask {
        Some(m) => g.apply_mask(x, m.clone()),
        None => x,
    };
    let h_in = match &ctx.h_mask {
        Some(m) => g.apply_mask(prev.h, m.clone()),
        None => prev.h,
    };
    let (h, m) = p.lstm.step(g, x, h_in, prev.m)?;
    Ok(Cell { h, m })
}

/// Log-probabilities over the actions of a `kind` slot given `h`: productions
/// (illegal ones at `-inf`) for nonterminals, columns or tables for terminals.
pub fn action_log_probs(
    g: &mut Graph,
    p: &DecoderParams,
    grammar: &Grammar,
    ctx: &DecoderContext,
    h: Var,
    kind: KindId,
) -> Result<Var> {
    match grammar.kind(kind).terminal {
        None => {
            let (w1, b1) = (g.param(p.rule_w1), g.param(p.rule_b1));
            let hid = g.linear(h, w1, Some(b1))?;
            let hid = g.tanh(hid);
            let (w2, b2) = (g.param(p.rule_w2), g.param(p.rule_b2));
            let logits = g.linear(hid, w2, Some(b2))?;
            g.log_softmax(logits, Some(&ctx.rule_masks[kind.0]))
        }
        Some(t) => {
            let probs = pointer_probs(g, p, ctx, h, t)?;
            Ok(g.log(probs))
        }
    }
}

/// `Pr(i) = Σ_j λ_j L_{j,i}` with `λ = softmax(h W_Q (y W_K)ᵀ / √d_x)`.
pub fn pointer_probs(g: &mut Graph, p: &DecoderParams, ctx: &DecoderContext, h: Var, t: Terminal) -> Result<Var> {
    let (wq, keys, l) = match t {
        Terminal::Column => (p.col_q, ctx.col_keys, ctx.l_col),
        Terminal::Table => (p.tab_q, ctx.tab_keys, ctx.l_tab),
    };
    let wq = g.param(wq);
    let q = g.matmul(h, wq)?;
    let s = g.matmul_t(q, keys)?;
    let s = g.scale(s, 1.0 / (p.d_x as f64).sqrt());
    let lambda = g.softmax(s, None)?;
    g.mix(lambda, l)
}

/// Embedding fed back after emitting `action`.
pub fn action_embedding(g: &mut Graph, p: &DecoderParams, ctx: &DecoderContext, action: Action) -> Result<Var> {
    match action {
        Action::ApplyRule(r) => {
            let t = g.param(p.rule_emb);
            g.gather(t, &[r.0])
        }
        Action::SelectColumn(c) => g.row_of(ctx.col_actions, c),
        Action::SelectTable(t) => g.row_of(ctx.tab_actions, t),
    }
}
