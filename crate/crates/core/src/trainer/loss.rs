use std::collections::BTreeSet;

use crate::error::Result;
use crate::numerics::{Graph, Var};
use crate::sql_grammar::{AstNode, SqlAst};

/// Columns and tables that appear in the tree.
pub fn relevant_nodes(ast: &SqlAst) -> (Vec<usize>, Vec<usize>) {
    fn walk(n: &AstNode, cols: &mut BTreeSet<usize>, tabs: &mut BTreeSet<usize>) {
        match n {
            AstNode::Column(c) => {
                cols.insert(*c);
            }
            AstNode::Table(t) => {
                tabs.insert(*t);
            }
            AstNode::Rule { children, .. } => children.iter().for_each(|c| walk(c, cols, tabs)),
        }
    }
    let mut cols = BTreeSet::new();
    let mut tabs = BTreeSet::new();
    walk(&ast.root, &mut cols, &mut tabs);
    (cols.into_iter().collect(), tabs.into_iter().collect())
}

/// `−mean_{j∈cols} log max_i L^col_{i,j} − mean_{j∈tabs} log max_i L^tab_{i,j}`;
/// a term with no relevant items is left out. `None` when both are empty.
pub fn align_loss(g: &mut Graph, l_col: Var, l_tab: Var, cols: &[usize], tabs: &[usize]) -> Result<Option<Var>> {
    let mut terms = Vec::new();
    for (l, items) in [(l_col, cols), (l_tab, tabs)] {
        if items.is_empty() {
            continue;
        }
        let best = g.max_rows(l)?;
        let mut logs = Vec::with_capacity(items.len());
        for &j in items {
            let p = g.pick(best, j)?;
            logs.push(g.log(p));
        }
        let total = g.add_n(&logs)?;
        terms.push(g.scale(total, -1.0 / items.len() as f64));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(g.add_n(&terms)?))
}
