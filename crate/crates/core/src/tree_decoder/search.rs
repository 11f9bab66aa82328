use serde::{Deserialize, Serialize};

use super::model::{
    action_embedding, action_log_probs, action_position, initial_cell, step, Cell, DecoderContext, DecoderParams,
    StepInput,
};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};
use crate::sql_grammar::{delinearize, Action, AstNode, Grammar, KindId, SqlAst};

/// Which choices are taken from the gold tree instead of the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Oracle {
    #[default]
    None,
    /// Gold productions.
    Sketch,
    /// Gold columns and tables.
    Columns,
    Both,
}

impl Oracle {
    pub const ALL: [Oracle; 4] = [Oracle::None, Oracle::Sketch, Oracle::Columns, Oracle::Both];

    pub fn forces_rules(self) -> bool {
        matches!(self, Oracle::Sketch | Oracle::Both)
    }

    pub fn forces_terminals(self) -> bool {
        matches!(self, Oracle::Columns | Oracle::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Oracle::None => "none",
            Oracle::Sketch => "sketch",
            Oracle::Columns => "columns",
            Oracle::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Oracle> {
        Oracle::ALL.into_iter().find(|o| o.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, Copy)]
struct Open<'a> {
    kind: KindId,
    parent: Option<usize>,
    gold: Option<&'a AstNode>,
}

/// Partial decode: recurrent cell, open slots, and the per-step history used
/// for parent feeding.
#[derive(Debug, Clone)]
pub struct DecoderState<'a> {
    cell: Cell,
    prev_action: Var,
    hs: Vec<Var>,
    embs: Vec<Var>,
    stack: Vec<Open<'a>>,
    actions: Vec<Action>,
    log_prob: f64,
}

impl<'a> DecoderState<'a> {
    pub fn new(g: &mut Graph, p: &DecoderParams, grammar: &Grammar, gold: Option<&'a AstNode>) -> Self {
        DecoderState {
            cell: initial_cell(g, p),
            prev_action: g.param(p.a0),
            hs: Vec::new(),
            embs: Vec::new(),
            stack: vec![Open {
                kind: grammar.root(),
                parent: None,
                gold,
            }],
            actions: Vec::new(),
            log_prob: 0.0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn log_prob(&self) -> f64 {
        self.log_prob
    }

    /// Kind of the slot expanded next.
    pub fn next_kind(&self) -> Option<KindId> {
        self.stack.last().map(|o| o.kind)
    }

    pub fn cell(&self) -> Cell {
        self.cell
    }

    fn input(&self, g: &mut Graph, p: &DecoderParams) -> Result<StepInput> {
        let top = self
            .stack
            .last()
            .ok_or_else(|| Error::Decode("step on a finished tree".into()))?;
        let (parent_h, parent_action) = match top.parent {
            Some(s) => (self.hs[s], self.embs[s]),
            None => (g.param(p.root_h), g.param(p.root_a)),
        };
        Ok(StepInput {
            prev_action: self.prev_action,
            parent_h,
            parent_action,
            kind: top.kind,
        })
    }

    fn forced(&self, oracle: Oracle) -> Option<Action> {
        match self.stack.last()?.gold? {
            AstNode::Rule { prod, .. } if oracle.forces_rules() => Some(Action::ApplyRule(*prod)),
            AstNode::Column(c) if oracle.forces_terminals() => Some(Action::SelectColumn(*c)),
            AstNode::Table(t) if oracle.forces_terminals() => Some(Action::SelectTable(*t)),
            _ => None,
        }
    }

    /// Commits `action` taken from a slot whose step produced `cell`.
    pub fn advance(
        &mut self,
        g: &mut Graph,
        p: &DecoderParams,
        grammar: &Grammar,
        ctx: &DecoderContext,
        cell: Cell,
        action: Action,
        log_prob: f64,
    ) -> Result<()> {
        let top = *self
            .stack
            .last()
            .ok_or_else(|| Error::Decode("action applied to a finished tree".into()))?;
        if !grammar.is_legal(top.kind, action, ctx.num_columns, ctx.num_tables) {
            return Err(Error::Decode(format!(
                "{} is illegal for a `{}` slot",
                action_name(grammar, action),
                grammar.kind(top.kind).name
            )));
        }
        self.stack.pop();
        let emb = action_embedding(g, p, ctx, action)?;
        let t = self.actions.len();
        self.hs.push(cell.h);
        self.embs.push(emb);
        self.cell = cell;
        self.prev_action = emb;
        self.actions.push(action);
        self.log_prob += log_prob;
        if let Action::ApplyRule(prod) = action {
            let gold_children = match top.gold {
                Some(AstNode::Rule { prod: gp, children }) if *gp == prod => Some(children),
                _ => None,
            };
            let kinds = &grammar.production(prod).children;
            for (i, &k) in kinds.iter().enumerate().rev() {
                self.stack.push(Open {
                    kind: k,
                    parent: Some(t),
                    gold: gold_children.map(|c| &c[i]),
                });
            }
        }
        Ok(())
    }
}

/// Runs one decoder step from `state`: returns the new cell and the
/// log-probabilities over the next slot's actions.
pub fn next_distribution(
    g: &mut Graph,
    p: &DecoderParams,
    grammar: &Grammar,
    ctx: &DecoderContext,
    state: &DecoderState<'_>,
) -> Result<(Cell, Var)> {
    let input = state.input(g, p)?;
    let cell = step(g, p, ctx, state.cell, input)?;
    let lp = action_log_probs(g, p, grammar, ctx, cell.h, input.kind)?;
    Ok((cell, lp))
}

pub fn action_name(grammar: &Grammar, a: Action) -> String {
    match a {
        Action::ApplyRule(p) => format!("ApplyRule({})", grammar.production(p).name),
        Action::SelectColumn(c) => format!("SelectColumn({c})"),
        Action::SelectTable(t) => format!("SelectTable({t})"),
    }
}

/// Teacher-forced loss over a gold action sequence.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// `-Σ_t log Pr(a_t | a_<t)`
    pub loss: Var,
    pub steps: usize,
    /// Steps where the gold action is the model's top choice.
    pub correct: usize,
    pub log_probs: Vec<f64>,
}

pub fn teacher_forced_nll(
    g: &mut Graph,
    p: &DecoderParams,
    grammar: &Grammar,
    ctx: &DecoderContext,
    actions: &[Action],
) -> Result<TeacherForced> {
    let mut state = DecoderState::new(g, p, grammar, None);
    let mut terms = Vec::new();
    let mut correct = 0;
    let mut log_probs = Vec::with_capacity(actions.len());
    for &a in actions {
        let kind = state
            .next_kind()
            .ok_or_else(|| Error::Decode("gold actions continue past a complete tree".into()))?;
        if !grammar.is_legal(kind, a, ctx.num_columns, ctx.num_tables) {
            return Err(Error::Decode(format!(
                "gold {} is illegal for a `{}` slot",
                action_name(grammar, a),
                grammar.kind(kind).name
            )));
        }
        let k = grammar.kind(kind);
        let input = state.input(g, p)?;
        let cell = step(g, p, ctx, state.cell, input)?;
        let lp = if k.terminal.is_none() && k.productions.len() == 1 {
            // a single legal rule has probability one
            correct += 1;
            0.0
        } else {
            let dist = action_log_probs(g, p, grammar, ctx, cell.h, kind)?;
            let pos = action_position(a);
            let values = g.value(dist);
            let best = argmax(&ctx.candidates(grammar, kind), values);
            if best == Some(a) {
                correct += 1;
            }
            let v = values[pos];
            terms.push(g.pick(dist, pos)?);
            v
        };
        log_probs.push(lp);
        state.advance(g, p, grammar, ctx, cell, a, lp)?;
    }
    if !state.is_done() {
        return Err(Error::Decode("gold actions end before the tree is complete".into()));
    }
    let loss = if terms.is_empty() {
        g.zeros(1, 1)
    } else {
        let total = g.add_n(&terms)?;
        g.scale(total, -1.0)
    };
    Ok(TeacherForced {
        loss,
        steps: actions.len(),
        correct,
        log_probs,
    })
}

fn argmax(cands: &[Action], values: &[f64]) -> Option<Action> {
    let mut best: Option<(Action, f64)> = None;
    for &a in cands {
        let v = values[action_position(a)];
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceAlternative {
    pub action: String,
    pub prob: f64,
}

/// One greedy step, for error analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub node: String,
    pub chosen: String,
    pub prob: f64,
    pub forced: bool,
    /// Up to five most probable actions.
    pub top: Vec<TraceAlternative>,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub ast: SqlAst,
    pub actions: Vec<Action>,
    pub log_prob: f64,
    /// Per-step trace; filled by greedy search only.
    pub trace: Vec<TraceStep>,
}

impl Decoded {
    pub fn trace_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.trace).unwrap_or(serde_json::Value::Null)
    }
}

/// Decodes one tree. With an oracle, `gold` supplies the forced choices
/// wherever the partial tree still lines up with it.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    g: &mut Graph,
    p: &DecoderParams,
    grammar: &Grammar,
    ctx: &DecoderContext,
    db_id: &str,
    mode: SearchMode,
    oracle: Oracle,
    gold: Option<&SqlAst>,
) -> Result<Decoded> {
    if oracle != Oracle::None && gold.is_none() {
        return Err(Error::Config(format!("oracle `{}` needs a gold tree", oracle.name())));
    }
    let gold_root = if oracle == Oracle::None { None } else { gold.map(|a| &a.root) };
    match mode {
        SearchMode::Greedy => greedy(g, p, grammar, ctx, db_id, oracle, gold_root),
        SearchMode::Beam(0) => Err(Error::Config("beam size must be positive".into())),
        SearchMode::Beam(1) => greedy(g, p, grammar, ctx, db_id, oracle, gold_root).map(|mut d| {
            d.trace.clear();
            d
        }),
        SearchMode::Beam(k) => {
            let best = beam(g, p, grammar, ctx, db_id, k, oracle, gold_root);
            // the greedy path may fall off a narrow beam
            let gr = greedy(g, p, grammar, ctx, db_id, oracle, gold_root).map(|mut d| {
                d.trace.clear();
                d
            });
            match (best, gr) {
                (Ok(b), Ok(gr)) if gr.log_prob > b.log_prob => Ok(gr),
                (Ok(b), _) => Ok(b),
                (Err(_), Ok(gr)) => Ok(gr),
                (Err(e), Err(_)) => Err(e),
            }
        }
    }
}

fn finish(grammar: &Grammar, ctx: &DecoderContext, db_id: &str, state: &DecoderState<'_>, trace: Vec<TraceStep>) -> Result<Decoded> {
    let ast = delinearize(grammar, db_id, &state.actions, ctx.num_columns, ctx.num_tables)?;
    Ok(Decoded {
        ast,
        actions: state.actions.clone(),
        log_prob: state.log_prob,
        trace,
    })
}

fn greedy(
    g: &mut Graph,
    p: &DecoderParams,
    grammar: &Grammar,
    ctx: &DecoderContext,
    db_id: &str,
    oracle: Oracle,
    gold: Option<&AstNode>,
) -> Result<Decoded> {
    let mut state = DecoderState::new(g, p, grammar, gold);
    let mut trace = Vec::new();
    while let Some(kind) = state.next_kind() {
        if state.actions.len() >= p.cfg.step_limit {
            return Err(Error::StepLimit {
                limit: p.cfg.step_limit,
                emitted: state.actions.len(),
            });
        }
        let (cell, dist) = next_distribution(g, p, grammar, ctx, &state)?;
        let cands = ctx.candidates(grammar, kind);
        let values = g.value(dist);
        let forced = state.forced(oracle);
        let action = match forced {
            Some(a) => a,
            None => argmax(&cands, values).ok_or_else(|| {
                Error::Decode(format!("no candidate actions for a `{}` slot", grammar.kind(kind).name))
            })?,
        };
        let lp = values[action_position(action)];
        let mut ranked: Vec<(Action, f64)> = cands.iter().map(|&a| (a, values[action_position(a)])).collect();
        ranked.sort_by(|x, y| y.1.total_cmp(&x.1));
        trace.push(TraceStep {
            step: state.actions.len(),
            node: grammar.kind(kind).name.clone(),
            chosen: action_name(grammar, action),
            prob: lp.exp(),
            forced: forced.is_some(),
            top: ranked
                .iter()
                .take(5)
                .map(|&(a, v)| TraceAlternative {
                    action: action_name(grammar, a),
                    prob: v.exp(),
                })
                .collect(),
        });
        state.advance(g, p, grammar, ctx, cell, action, lp)?;
    }
    finish(grammar, ctx, db_id, &state, trace)
}

#[allow(clippy::too_many_arguments)]
fn beam<'a>(
    g: &mut Graph,
    p: &DecoderParams,
    grammar: &Grammar,
    ctx: &DecoderContext,
    db_id: &str,
    k: usize,
    oracle: Oracle,
    gold: Option<&'a AstNode>,
) -> Result<Decoded> {
    let mut active = vec![DecoderState::new(g, p, grammar, gold)];
    let mut finished: Vec<DecoderState<'a>> = Vec::new();
    let best_of = |states: &[DecoderState<'a>]| {
        states
            .iter()
            .map(|s| s.log_prob)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    while !active.is_empty() && finished.len() < k {
        // scores only fall, so a finished tree at least as good as every live one wins
        if !finished.is_empty() && best_of(&finished) >= best_of(&active) {
            break;
        }
        if active[0].actions.len() >= p.cfg.step_limit {
            if finished.is_empty() {
                return Err(Error::StepLimit {
                    limit: p.cfg.step_limit,
                    emitted: active[0].actions.len(),
                });
            }
            break;
        }
        let mut cands: Vec<(f64, usize, Action, Cell, f64)> = Vec::new();
        for (i, state) in active.iter().enumerate() {
            let kind = state.next_kind().expect("active states are unfinished");
            let (cell, dist) = next_distribution(g, p, grammar, ctx, state)?;
            let values = g.value(dist);
            let options = match state.forced(oracle) {
                Some(a) => vec![a],
                None => ctx.candidates(grammar, kind),
            };
            for a in options {
                let lp = values[action_position(a)];
                cands.push((state.log_prob + lp, i, a, cell, lp));
            }
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0));
        cands.truncate(k);
        let mut next = Vec::with_capacity(cands.len());
        for (_, i, a, cell, lp) in cands {
            let mut s = active[i].clone();
            s.advance(g, p, grammar, ctx, cell, a, lp)?;
            if s.is_done() {
                finished.push(s);
            } else {
                next.push(s);
            }
        }
        active = next;
    }
    let mut best: Option<&DecoderState<'a>> = None;
    for s in &finished {
        if best.is_none_or(|b| s.log_prob > b.log_prob) {
            best = Some(s);
        }
    }
    let best = best.ok_or_else(|| Error::Decode("beam search finished no tree".into()))?;
    finish(grammar, ctx, db_id, best, Vec::new())
}
