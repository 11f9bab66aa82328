//! Random schemas and brute-force reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

pub mod layer;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use ratsql::schema_graph::{
    ColumnType, LinkMatrix, MatchLevel, NodeRef, QuestionTokens, RelationLabel, Schema, TokenizerConfig,
};
use ratsql::schema_linker::CellValue;

pub const WORDS: &[&str] = &[
    "name", "model", "id", "car", "year", "maker", "city", "country", "age", "price", "type", "code",
];
pub const VALUES: &[&str] = &["red", "new york", "paris", "ford", "blue sky", "4", "2.5", "100"];

fn name<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join("_")
}

/// A valid schema with 1 to `max_tables` tables and random keys.
pub fn random_schema<R: Rng>(rng: &mut R, max_tables: usize) -> Schema {
    let nt = rng.random_range(1..=max_tables);
    let tables: Vec<String> = (0..nt).map(|_| name(rng)).collect();
    let mut cols: Vec<(usize, String, ColumnType, bool)> = Vec::new();
    for t in 0..nt {
        let n = rng.random_range(1..=4);
        let pk = rng.random_bool(0.7);
        for k in 0..n {
            let ty = if rng.random_bool(0.5) { ColumnType::Text } else { ColumnType::Number };
            cols.push((t, name(rng), ty, pk && k == 0));
        }
    }
    let mut fks = BTreeSet::new();
    for _ in 0..rng.random_range(0..=nt + 1) {
        let s = rng.random_range(0..cols.len());
        let d = rng.random_range(0..cols.len());
        if cols[d].3 && cols[s].0 != cols[d].0 {
            fks.insert((s, d));
        }
    }
    let tab_refs: Vec<&str> = tables.iter().map(String::as_str).collect();
    let col_refs: Vec<(usize, &str, ColumnType, bool)> =
        cols.iter().map(|(t, n, ty, pk)| (*t, n.as_str(), *ty, *pk)).collect();
    let fks: Vec<(usize, usize)> = fks.into_iter().collect();
    Schema::build("random", &tab_refs, &col_refs, &fks, TokenizerConfig::default()).unwrap()
}

/// Up to 12 question words drawn from schema words, cell values and noise.
pub fn random_question<R: Rng>(rng: &mut R) -> QuestionTokens {
    let n = rng.random_range(0..=12);
    let mut words = Vec::new();
    for _ in 0..n {
        match rng.random_range(0..3) {
            0 => words.push(WORDS.choose(rng).unwrap().to_string()),
            1 => words.extend(VALUES.choose(rng).unwrap().split(' ').map(str::to_string)),
            _ => words.push(["the", "of", "with", "show", "7"].choose(rng).unwrap().to_string()),
        }
    }
    QuestionTokens::from_words(&words)
}

pub fn random_rows<R: Rng>(rng: &mut R, schema: &Schema) -> BTreeMap<usize, Vec<CellValue>> {
    let mut rows = BTreeMap::new();
    for c in &schema.columns {
        let n = rng.random_range(0..4);
        let cells = (0..n)
            .map(|_| match c.ty {
                ColumnType::Number => CellValue::Num([4.0, 2.5, 100.0, 7.0][rng.random_range(0..4)]),
                _ => CellValue::Text(VALUES.choose(rng).unwrap().to_string()),
            })
            .collect();
        rows.insert(c.id, cells);
    }
    rows
}

fn subsequences(name: &[String]) -> Vec<Vec<String>> {
    let n = name.len();
    (1u32..1 << n)
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| name[i].clone()).collect())
        .collect()
}

/// Enumerates every n-gram (n ≤ 5) against every subsequence of every name.
pub fn brute_name_link(q: &QuestionTokens, schema: &Schema) -> LinkMatrix {
    let nq = q.len();
    let mut columns = vec![vec![MatchLevel::NoMatch; schema.num_columns()]; nq];
    let mut tables = vec![vec![MatchLevel::NoMatch; schema.num_tables()]; nq];
    let names: Vec<(bool, usize, &Vec<String>)> = schema
        .columns
        .iter()
        .map(|c| (true, c.id, &c.words))
        .chain(schema.tables.iter().map(|t| (false, t.id, &t.words)))
        .collect();
    for start in 0..nq {
        for len in 1..=5 {
            if start + len > nq {
                break;
            }
            let gram = &q.tokens[start..start + len];
            for &(is_col, id, words) in &names {
                let level = if gram == words.as_slice() {
                    MatchLevel::ExactMatch
                } else if subsequences(words).iter().any(|s| s.as_slice() == gram) {
                    MatchLevel::PartialMatch
                } else {
                    continue;
                };
                for tok in start..start + len {
                    let cell = if is_col { &mut columns[tok][id] } else { &mut tables[tok][id] };
                    if level > *cell {
                        *cell = level;
                    }
                }
            }
        }
    }
    LinkMatrix { columns, tables }
}

/// Scans the raw rows for every question token.
pub fn brute_value_link(q: &QuestionTokens, rows: &BTreeMap<usize, Vec<CellValue>>) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, tok) in q.tokens.iter().enumerate() {
        for (&col, cells) in rows {
            if cells.iter().any(|cell| cell.words(TokenizerConfig::default()).contains(tok)) {
                out.insert((i, col));
            }
        }
    }
    out
}

/// Every schema-graph rule that holds for the ordered pair, evaluated independently.
pub fn table1_labels(schema: &Schema, x: NodeRef, y: NodeRef) -> Vec<RelationLabel> {
    use RelationLabel::*;
    let fk = |a: usize, b: usize| schema.foreign_keys.contains(&(a, b));
    let mut out = Vec::new();
    match (x, y) {
        (NodeRef::Column(a), NodeRef::Column(b)) if a != b => {
            if schema.columns[a].table == schema.columns[b].table {
                out.push(SameTable);
            }
            if fk(a, b) {
                out.push(ForeignKeyColF);
            }
            if fk(b, a) {
                out.push(ForeignKeyColR);
            }
        }
        (NodeRef::Column(c), NodeRef::Table(t)) => {
            let col = &schema.columns[c];
            if col.table == t && col.is_primary_key {
                out.push(PrimaryKeyF);
            }
            if col.table == t && !col.is_primary_key {
                out.push(BelongsToF);
            }
        }
        (NodeRef::Table(t), NodeRef::Column(c)) => {
            let col = &schema.columns[c];
            if col.table == t && col.is_primary_key {
                out.push(PrimaryKeyR);
            }
            if col.table == t && !col.is_primary_key {
                out.push(BelongsToR);
            }
        }
        (NodeRef::Table(a), NodeRef::Table(b)) if a != b => {
            let has = |s: usize, d: usize| {
                schema
                    .foreign_keys
                    .iter()
                    .any(|&(p, q)| schema.columns[p].table == s && schema.columns[q].table == d)
            };
            match (has(a, b), has(b, a)) {
                (true, true) => out.push(ForeignKeyTabB),
                (true, false) => out.push(ForeignKeyTabF),
                (false, true) => out.push(ForeignKeyTabR),
                _ => {}
            }
        }
        _ => {}
    }
    out
}

/// All nodes of a schema, columns first.
pub fn nodes(schema: &Schema) -> Vec<NodeRef> {
    (0..schema.num_columns())
        .map(NodeRef::Column)
        .chain((0..schema.num_tables()).map(NodeRef::Table))
        .collect()
}

/// Expected label of every pair of the question-contextualised graph:
/// identities, clipped question distances, schema edges with the generic
/// fallback, and link levels.
pub fn relation_oracle(
    schema: &Schema,
    q: &QuestionTokens,
    links: &LinkMatrix,
    values: &BTreeSet<(usize, usize)>,
) -> Vec<(RelationLabel, bool)> {
    use RelationLabel::*;
    let nc = schema.num_columns();
    let ns = nc + schema.num_tables();
    let n = ns + q.len();
    let node = |i: usize| if i < nc { NodeRef::Column(i) } else { NodeRef::Table(i - nc) };
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let cell = if i >= ns && j >= ns {
                let d = (j as i64 - i as i64).clamp(-2, 2);
                (QuestionDist(d as i8), false)
            } else if i >= ns {
                let t = i - ns;
                if j < nc {
                    (QuestionColumn(links.columns[t][j]), values.contains(&(t, j)))
                } else {
                    (QuestionTable(links.tables[t][j - nc]), false)
                }
            } else if j >= ns {
                let t = j - ns;
                if i < nc {
                    (ColumnQuestion(links.columns[t][i]), values.contains(&(t, i)))
                } else {
                    (TableQuestion(links.tables[t][i - nc]), false)
                }
            } else if i == j {
                (if i < nc { ColumnIdentity } else { TableIdentity }, false)
            } else {
                let labels = table1_labels(schema, node(i), node(j));
                let label = match labels.as_slice() {
                    [] => match (i < nc, j < nc) {
                        (true, true) => ColumnColumn,
                        (true, false) => ColumnTable,
                        (false, true) => TableColumn,
                        (false, false) => TableTable,
                    },
                    [l] => *l,
                    // mutual foreign keys: the forward reading wins
                    [ForeignKeyColF, ForeignKeyColR] => ForeignKeyColF,
                    many => panic!("several schema-graph rules hold at once: {many:?}"),
                };
                (label, false)
            };
            out.push(cell);
        }
    }
    out
}
