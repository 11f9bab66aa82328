//! SQL abstract syntax: the grammar, trees and action sequences, parsing,
//! rendering and exact-match comparison.

mod ast;
mod canon;
mod grammar;
mod parser;
mod render;

pub use ast::{delinearize, linearize, sample_ast, AstNode, Frontier, Slot, SqlAst};
pub use canon::{canonical_form, exact_match};
pub use grammar::{Action, Grammar, Kind, KindId, ProdId, Production, Terminal, GRAMMAR_VERSION};
pub use parser::parse_sql;
pub use render::{infer_join, render_sql};
