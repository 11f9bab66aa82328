use super::ast::{AstNode, SqlAst};
use super::grammar::Grammar;
use crate::error::{Error, Result};

/// Canonical text of a tree: conjunct sets and SELECT lists are sorted,
/// literals are placeholders already.
pub fn canonical_form(g: &Grammar, ast: &SqlAst) -> String {
    canon(g, &ast.root)
}

fn canon(g: &Grammar, n: &AstNode) -> String {
    match n {
        AstNode::Column(c) => format!("c{c}"),
        AstNode::Table(t) => format!("t{t}"),
        AstNode::Rule { children, .. } => {
            let name = n.name(g);
            match name {
                "AggOne" | "AggMore" => {
                    let mut items = Vec::new();
                    let mut cur = n;
                    loop {
                        let ch = cur.children();
                        items.push(canon(g, &ch[0]));
                        if cur.name(g) == "AggMore" {
                            cur = &ch[1];
                        } else {
                            break;
                        }
                    }
                    items.sort();
                    format!("Aggs[{}]", items.join(","))
                }
                "And" => {
                    let mut parts = Vec::new();
                    conjuncts(g, n, &mut parts);
                    let mut items: Vec<String> = parts.into_iter().map(|c| canon(g, c)).collect();
                    items.sort();
                    items.dedup();
                    format!("And{{{}}}", items.join(","))
                }
                _ => {
                    let inner: Vec<String> = children.iter().map(|c| canon(g, c)).collect();
                    format!("{name}({})", inner.join(","))
                }
            }
        }
    }
}

fn conjuncts<'a>(g: &Grammar, n: &'a AstNode, out: &mut Vec<&'a AstNode>) {
    if n.name(g) == "And" {
        for c in n.children() {
            conjuncts(g, c, out);
        }
    } else {
        out.push(n);
    }
}

/// Component-insensitive equality of two trees over the same database.
pub fn exact_match(g: &Grammar, pred: &SqlAst, gold: &SqlAst) -> Result<bool> {
    if pred.db_id != gold.db_id {
        return Err(Error::Schema(format!(
            "cannot compare a query over `{}` with one over `{}`",
            pred.db_id, gold.db_id
        )));
    }
    Ok(canonical_form(g, pred) == canonical_form(g, gold))
}
