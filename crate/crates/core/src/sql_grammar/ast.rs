use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::grammar::{Action, Grammar, KindId, ProdId, Terminal};
use crate::error::{Error, Result};

/// A node of an abstract syntax tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AstNode {
    Rule { prod: ProdId, children: Vec<AstNode> },
    Column(usize),
    Table(usize),
}

impl AstNode {
    pub fn rule(prod: ProdId, children: Vec<AstNode>) -> Self {
        AstNode::Rule { prod, children }
    }

    /// The production name, or `Column` / `Table`.
    pub fn name<'g>(&self, g: &'g Grammar) -> &'g str {
        match self {
            AstNode::Rule { prod, .. } => &g.production(*prod).name,
            AstNode::Column(_) => "Column",
            AstNode::Table(_) => "Table",
        }
    }

    pub fn children(&self) -> &[AstNode] {
        match self {
            AstNode::Rule { children, .. } => children,
            _ => &[],
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(AstNode::size).sum::<usize>()
    }
}

/// A SQL query as a tree over one schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlAst {
    pub db_id: String,
    pub root: AstNode,
}

impl SqlAst {
    pub fn new(db_id: &str, root: AstNode) -> Self {
        SqlAst {
            db_id: db_id.to_string(),
            root,
        }
    }

    /// Checks the tree against the grammar and schema sizes.
    pub fn validate(&self, g: &Grammar, num_columns: usize, num_tables: usize) -> Result<()> {
        fn walk(g: &Grammar, n: &AstNode, kind: KindId, nc: usize, nt: usize) -> Result<()> {
            let action = match n {
                AstNode::Rule { prod, .. } => Action::ApplyRule(*prod),
                AstNode::Column(c) => Action::SelectColumn(*c),
                AstNode::Table(t) => Action::SelectTable(*t),
            };
            if !g.is_legal(kind, action, nc, nt) {
                return Err(Error::InvalidAst(format!(
                    "{action} cannot fill a `{}` slot",
                    g.kind(kind).name
                )));
            }
            if let AstNode::Rule { prod, children } = n {
                let p = g.production(*prod);
                if p.children.len() != children.len() {
                    return Err(Error::InvalidAst(format!(
                        "`{}` takes {} children, got {}",
                        p.name,
                        p.children.len(),
                        children.len()
                    )));
                }
                for (c, k) in children.iter().zip(&p.children) {
                    walk(g, c, *k, nc, nt)?;
                }
            }
            Ok(())
        }
        walk(g, &self.root, g.root(), num_columns, num_tables)
    }

    pub fn to_json(&self, g: &Grammar) -> Value {
        fn node(g: &Grammar, n: &AstNode) -> Value {
            match n {
                AstNode::Rule { prod, children } => json!({
                    "rule": g.production(*prod).name,
                    "children": children.iter().map(|c| node(g, c)).collect::<Vec<_>>(),
                }),
                AstNode::Column(c) => json!({ "column": c }),
                AstNode::Table(t) => json!({ "table": t }),
            }
        }
        json!({ "db_id": self.db_id, "root": node(g, &self.root) })
    }

    pub fn from_json(g: &Grammar, v: &Value) -> Result<SqlAst> {
        fn node(g: &Grammar, v: &Value) -> Result<AstNode> {
            if let Some(c) = v.get("column").and_then(Value::as_u64) {
                return Ok(AstNode::Column(c as usize));
            }
            if let Some(t) = v.get("table").and_then(Value::as_u64) {
                return Ok(AstNode::Table(t as usize));
            }
            let name = v
                .get("rule")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::InvalidAst(format!("unrecognised node {v}")))?;
            let prod = g
                .prod_id(name)
                .ok_or_else(|| Error::InvalidAst(format!("unknown rule `{name}`")))?;
            let children = match v.get("children").and_then(Value::as_array) {
                Some(cs) => cs.iter().map(|c| node(g, c)).collect::<Result<_>>()?,
                None => Vec::new(),
            };
            Ok(AstNode::Rule { prod, children })
        }
        let db_id = v.get("db_id").and_then(Value::as_str).unwrap_or_default();
        let root = v
            .get("root")
            .ok_or_else(|| Error::InvalidAst("missing `root`".into()))?;
        Ok(SqlAst::new(db_id, node(g, root)?))
    }
}

/// Pre-order, left-to-right action sequence of a tree.
pub fn linearize(g: &Grammar, ast: &SqlAst) -> Result<Vec<Action>> {
    fn walk(n: &AstNode, out: &mut Vec<Action>) {
        match n {
            AstNode::Rule { prod, children } => {
                out.push(Action::ApplyRule(*prod));
                for c in children {
                    walk(c, out);
                }
            }
            AstNode::Column(c) => out.push(Action::SelectColumn(*c)),
            AstNode::Table(t) => out.push(Action::SelectTable(*t)),
        }
    }
    ast.validate(g, usize::MAX, usize::MAX)?;
    let mut out = Vec::with_capacity(ast.root.size());
    walk(&ast.root, &mut out);
    Ok(out)
}

/// An open slot waiting to be expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub kind: KindId,
    /// Step of the action that created this slot; `None` for the root.
    pub parent_step: Option<usize>,
}

/// Stack of open slots during depth-first generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frontier {
    stack: Vec<Slot>,
    steps: usize,
}

impl Frontier {
    pub fn new(g: &Grammar) -> Self {
        Frontier {
            stack: vec![Slot {
                kind: g.root(),
                parent_step: None,
            }],
            steps: 0,
        }
    }

    pub fn peek(&self) -> Option<Slot> {
        self.stack.last().copied()
    }

    pub fn is_done(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Consumes the top slot with `action`, pushing any children so the leftmost is on top.
    pub fn apply(&mut self, g: &Grammar, action: Action, num_columns: usize, num_tables: usize) -> Result<()> {
        let slot = self
            .stack
            .pop()
            .ok_or_else(|| Error::Decode("action applied to a finished tree".into()))?;
        if !g.is_legal(slot.kind, action, num_columns, num_tables) {
            self.stack.push(slot);
            return Err(Error::Decode(format!(
                "{action} is illegal for a `{}` slot",
                g.kind(slot.kind).name
            )));
        }
        if let Action::ApplyRule(p) = action {
            for &k in g.production(p).children.iter().rev() {
                self.stack.push(Slot {
                    kind: k,
                    parent_step: Some(self.steps),
                });
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// Rebuilds the tree from a complete action sequence.
pub fn delinearize(
    g: &Grammar,
    db_id: &str,
    actions: &[Action],
    num_columns: usize,
    num_tables: usize,
) -> Result<SqlAst> {
    fn build(
        g: &Grammar,
        kind: KindId,
        it: &mut std::slice::Iter<'_, Action>,
        nc: usize,
        nt: usize,
    ) -> Result<AstNode> {
        let a = *it
            .next()
            .ok_or_else(|| Error::InvalidAst(format!("actions end inside a `{}` slot", g.kind(kind).name)))?;
        if !g.is_legal(kind, a, nc, nt) {
            return Err(Error::InvalidAst(format!(
                "{a} cannot fill a `{}` slot",
                g.kind(kind).name
            )));
        }
        Ok(match a {
            Action::SelectColumn(c) => AstNode::Column(c),
            Action::SelectTable(t) => AstNode::Table(t),
            Action::ApplyRule(p) => {
                let kinds = g.production(p).children.clone();
                let mut children = Vec::with_capacity(kinds.len());
                for k in kinds {
                    children.push(build(g, k, it, nc, nt)?);
                }
                AstNode::Rule { prod: p, children }
            }
        })
    }
    let mut it = actions.iter();
    let root = build(g, g.root(), &mut it, num_columns, num_tables)?;
    if it.next().is_some() {
        return Err(Error::InvalidAst(format!(
            "{} trailing actions after a complete tree",
            it.len() + 1
        )));
    }
    Ok(SqlAst::new(db_id, root))
}

/// Samples a random tree; beyond `max_depth` every slot takes its shortest completion.
pub fn sample_ast<R: Rng>(
    g: &Grammar,
    rng: &mut R,
    db_id: &str,
    num_columns: usize,
    num_tables: usize,
    max_depth: usize,
) -> SqlAst {
    fn go<R: Rng>(
        g: &Grammar,
        rng: &mut R,
        kind: KindId,
        depth: usize,
        ctx: (usize, usize, usize, &[Option<ProdId>]),
    ) -> AstNode {
        let (nc, nt, max_depth, shortest) = ctx;
        match g.kind(kind).terminal {
            Some(Terminal::Column) => return AstNode::Column(rng.random_range(0..nc.max(1))),
            Some(Terminal::Table) => return AstNode::Table(rng.random_range(0..nt.max(1))),
            None => {}
        }
        let prods = &g.kind(kind).productions;
        let prod = if depth >= max_depth {
            shortest[kind.0].expect("every kind completes")
        } else {
            prods[rng.random_range(0..prods.len())]
        };
        let children = g
            .production(prod)
            .children
            .iter()
            .map(|&k| go(g, rng, k, depth + 1, ctx))
            .collect();
        AstNode::Rule { prod, children }
    }
    let (_, shortest) = g.min_completion();
    let root = go(g, rng, g.root(), 0, (num_columns, num_tables, max_depth, &shortest));
    SqlAst::new(db_id, root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_rng;

    #[test]
    fn single_column_slot_tree() {
        let g = Grammar::parse("A := Pick(Column)").unwrap();
        let ast = SqlAst::new("x", AstNode::rule(g.rule("Pick"), vec![AstNode::Column(3)]));
        let acts = linearize(&g, &ast).unwrap();
        assert_eq!(acts, vec![Action::ApplyRule(g.rule("Pick")), Action::SelectColumn(3)]);
    }

    #[test]
    fn random_trees_round_trip() {
        let g = Grammar::shipped();
        let mut rng = derive_rng(7, "ast-roundtrip", 0);
        for _ in 0..200 {
            let ast = sample_ast(g, &mut rng, "db", 5, 3, 6);
            let acts = linearize(g, &ast).unwrap();
            let back = delinearize(g, "db", &acts, 5, 3).unwrap();
            assert_eq!(back, ast);
            let json = ast.to_json(g);
            assert_eq!(SqlAst::from_json(g, &json).unwrap(), ast);
        }
    }

    #[test]
    fn frontier_tracks_parents() {
        let g = Grammar::shipped();
        let mut rng = derive_rng(3, "frontier", 0);
        let ast = sample_ast(g, &mut rng, "db", 4, 2, 5);
        let acts = linearize(g, &ast).unwrap();
        let mut f = Frontier::new(g);
        for (t, a) in acts.iter().enumerate() {
            let slot = f.peek().unwrap();
            if let Some(p) = slot.parent_step {
                assert!(p < t);
            }
            f.apply(g, *a, 4, 2).unwrap();
        }
        assert!(f.is_done());
    }

    #[test]
    fn truncated_and_trailing_sequences_fail() {
        let g = Grammar::shipped();
        let mut rng = derive_rng(5, "trunc", 0);
        let ast = sample_ast(g, &mut rng, "db", 4, 2, 4);
        let mut acts = linearize(g, &ast).unwrap();
        assert!(delinearize(g, "db", &acts[..acts.len() - 1], 4, 2).is_err());
        acts.push(Action::SelectTable(0));
        assert!(delinearize(g, "db", &acts, 4, 2).is_err());
    }
}
