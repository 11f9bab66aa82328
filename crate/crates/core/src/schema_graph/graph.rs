use std::collections::HashSet;
use std::fmt::Write as _;

use serde::Serialize;

use super::relations::RelationLabel;
use super::schema::Schema;
use crate::error::Result;

/// A node of the schema graph. Columns come first in the dense node order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum NodeRef {
    Column(usize),
    Table(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SchemaEdge {
    pub source: NodeRef,
    pub target: NodeRef,
    pub label: RelationLabel,
}

/// Directed labelled graph over columns and tables.
#[derive(Debug, Clone)]
pub struct SchemaGraph {
    num_columns: usize,
    num_tables: usize,
    edges: Vec<SchemaEdge>,
    dense: Vec<Option<RelationLabel>>,
}

impl SchemaGraph {
    pub fn edges(&self) -> &[SchemaEdge] {
        &self.edges
    }

    fn node_index(&self, node: NodeRef) -> usize {
        match node {
            NodeRef::Column(c) => c,
            NodeRef::Table(t) => self.num_columns + t,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_columns + self.num_tables
    }

    /// Label of the edge `source → target`, if any.
    pub fn label(&self, source: NodeRef, target: NodeRef) -> Option<RelationLabel> {
        let n = self.num_nodes();
        self.dense[self.node_index(source) * n + self.node_index(target)]
    }

    /// Label between dense node indices (columns, then tables).
    pub fn label_at(&self, i: usize, j: usize) -> Option<RelationLabel> {
        self.dense[i * self.num_nodes() + j]
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "num_columns": self.num_columns,
            "num_tables": self.num_tables,
            "edges": self.edges,
        })
    }

    pub fn to_dot(&self, schema: &Schema) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", schema.db_id);
        for t in &schema.tables {
            let _ = writeln!(out, "  t{} [shape=box, label=\"{}\"];", t.id, t.name);
        }
        for c in &schema.columns {
            let _ = writeln!(
                out,
                "  c{} [shape=ellipse, label=\"{}.{}\"];",
                c.id, schema.tables[c.table].name, c.name
            );
        }
        let name = |n: NodeRef| match n {
            NodeRef::Column(c) => format!("c{c}"),
            NodeRef::Table(t) => format!("t{t}"),
        };
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{}\"];",
                name(e.source),
                name(e.target),
                e.label.name()
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the directed schema graph: one edge per ordered pair of distinct
/// nodes for which a column/table relation holds.
pub fn build_schema_graph(schema: &Schema) -> Result<SchemaGraph> {
    schema.validate()?;
    let nc = schema.num_columns();
    let nt = schema.num_tables();
    let fk: HashSet<(usize, usize)> = schema.foreign_keys.iter().copied().collect();
    let mut tab_fk: HashSet<(usize, usize)> = HashSet::new();
    for &(s, d) in &schema.foreign_keys {
        tab_fk.insert((schema.columns[s].table, schema.columns[d].table));
    }

    let n = nc + nt;
    let mut dense = vec![None; n * n];
    let mut edges = Vec::new();
    let mut put = |src: NodeRef, dst: NodeRef, label: RelationLabel| {
        let i = match src {
            NodeRef::Column(c) => c,
            NodeRef::Table(t) => nc + t,
        };
        let j = match dst {
            NodeRef::Column(c) => c,
            NodeRef::Table(t) => nc + t,
        };
        dense[i * n + j] = Some(label);
        edges.push(SchemaEdge {
            source: src,
            target: dst,
            label,
        });
    };

    for x in &schema.columns {
        for y in &schema.columns {
            if x.id == y.id {
                continue;
            }
            let label = if fk.contains(&(x.id, y.id)) {
                Some(RelationLabel::ForeignKeyColF)
            } else if fk.contains(&(y.id, x.id)) {
                Some(RelationLabel::ForeignKeyColR)
            } else if x.table == y.table {
                Some(RelationLabel::SameTable)
            } else {
                None
            };
            if let Some(l) = label {
                put(NodeRef::Column(x.id), NodeRef::Column(y.id), l);
            }
        }
    }
    for c in &schema.columns {
        let (f, r) = if c.is_primary_key {
            (RelationLabel::PrimaryKeyF, RelationLabel::PrimaryKeyR)
        } else {
            (RelationLabel::BelongsToF, RelationLabel::BelongsToR)
        };
        put(NodeRef::Column(c.id), NodeRef::Table(c.table), f);
        put(NodeRef::Table(c.table), NodeRef::Column(c.id), r);
    }
    for x in 0..nt {
        for y in 0..nt {
            if x == y {
                continue;
            }
            let forward = tab_fk.contains(&(x, y));
            let reverse = tab_fk.contains(&(y, x));
            let label = match (forward, reverse) {
                (true, true) => Some(RelationLabel::ForeignKeyTabB),
                (true, false) => Some(RelationLabel::ForeignKeyTabF),
                (false, true) => Some(RelationLabel::ForeignKeyTabR),
                (false, false) => None,
            };
            if let Some(l) = label {
                put(NodeRef::Table(x), NodeRef::Table(y), l);
            }
        }
    }
    edges.sort_by_key(|e| (e.source, e.target));
    Ok(SchemaGraph {
        num_columns: nc,
        num_tables: nt,
        edges,
        dense,
    })
}

/// `max(-d, min(d, a))`
pub fn clip(a: i64, d: i64) -> i64 {
    debug_assert!(d >= 0);
    a.clamp(-d, d)
}
