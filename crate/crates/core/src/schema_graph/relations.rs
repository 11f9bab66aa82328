use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::graph::{build_schema_graph, clip, SchemaGraph};
use super::schema::Schema;
use super::tokenize::QuestionTokens;
use crate::error::{Error, Result};
use crate::numerics::{PairIndex, Segment};

/// Name-match strength between a question token and a schema item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatchLevel {
    NoMatch,
    PartialMatch,
    ExactMatch,
}

impl MatchLevel {
    pub const ALL: [MatchLevel; 3] = [MatchLevel::NoMatch, MatchLevel::PartialMatch, MatchLevel::ExactMatch];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MatchLevel::NoMatch => "NoMatch",
            MatchLevel::PartialMatch => "PartialMatch",
            MatchLevel::ExactMatch => "ExactMatch",
        }
    }
}

/// The closed set of relation labels between encoder nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationLabel {
    SameTable,
    ForeignKeyColF,
    ForeignKeyColR,
    PrimaryKeyF,
    PrimaryKeyR,
    BelongsToF,
    BelongsToR,
    ForeignKeyTabF,
    ForeignKeyTabR,
    ForeignKeyTabB,
    ColumnIdentity,
    TableIdentity,
    /// Clipped signed distance `j - i` in `-2..=2`.
    QuestionDist(i8),
    ColumnColumn,
    ColumnTable,
    TableColumn,
    TableTable,
    QuestionColumn(MatchLevel),
    QuestionTable(MatchLevel),
    ColumnQuestion(MatchLevel),
    TableQuestion(MatchLevel),
    ColumnValue,
    ValueColumn,
}

pub const MAX_QUESTION_DIST: i64 = 2;

/// Number of distinct pair types (labels with the match level and value flag removed).
pub const NUM_PAIR_TYPES: usize = 25;

impl RelationLabel {
    pub const COUNT: usize = 35;

    /// Every label in registry order.
    pub fn all() -> Vec<RelationLabel> {
        use RelationLabel::*;
        let mut out = vec![
            SameTable,
            ForeignKeyColF,
            ForeignKeyColR,
            PrimaryKeyF,
            PrimaryKeyR,
            BelongsToF,
            BelongsToR,
            ForeignKeyTabF,
            ForeignKeyTabR,
            ForeignKeyTabB,
            ColumnIdentity,
            TableIdentity,
        ];
        for d in -2..=2 {
            out.push(QuestionDist(d));
        }
        out.extend([ColumnColumn, ColumnTable, TableColumn, TableTable]);
        for m in MatchLevel::ALL {
            out.push(QuestionColumn(m));
        }
        for m in MatchLevel::ALL {
            out.push(QuestionTable(m));
        }
        for m in MatchLevel::ALL {
            out.push(ColumnQuestion(m));
        }
        for m in MatchLevel::ALL {
            out.push(TableQuestion(m));
        }
        out.extend([ColumnValue, ValueColumn]);
        out
    }

    /// Position in [`RelationLabel::all`].
    pub fn index(self) -> usize {
        use RelationLabel::*;
        match self {
            SameTable => 0,
            ForeignKeyColF => 1,
            ForeignKeyColR => 2,
            PrimaryKeyF => 3,
            PrimaryKeyR => 4,
            BelongsToF => 5,
            BelongsToR => 6,
            ForeignKeyTabF => 7,
            ForeignKeyTabR => 8,
            ForeignKeyTabB => 9,
            ColumnIdentity => 10,
            TableIdentity => 11,
            QuestionDist(d) => (12 + d as i64 + MAX_QUESTION_DIST) as usize,
            ColumnColumn => 17,
            ColumnTable => 18,
            TableColumn => 19,
            TableTable => 20,
            QuestionColumn(m) => 21 + m.index(),
            QuestionTable(m) => 24 + m.index(),
            ColumnQuestion(m) => 27 + m.index(),
            TableQuestion(m) => 30 + m.index(),
            ColumnValue => 33,
            ValueColumn => 34,
        }
    }

    /// The label stripped of its match level. Value labels have no pair type.
    pub fn pair_type(self) -> Option<usize> {
        use RelationLabel::*;
        match self {
            QuestionColumn(_) => Some(21),
            QuestionTable(_) => Some(22),
            ColumnQuestion(_) => Some(23),
            TableQuestion(_) => Some(24),
            ColumnValue | ValueColumn => None,
            other => Some(other.index()),
        }
    }

    pub fn match_level(self) -> Option<MatchLevel> {
        use RelationLabel::*;
        match self {
            QuestionColumn(m) | QuestionTable(m) | ColumnQuestion(m) | TableQuestion(m) => Some(m),
            _ => None,
        }
    }

    pub fn name(self) -> String {
        use RelationLabel::*;
        match self {
            SameTable => "Same-Table".into(),
            ForeignKeyColF => "Foreign-Key-Col-F".into(),
            ForeignKeyColR => "Foreign-Key-Col-R".into(),
            PrimaryKeyF => "Primary-Key-F".into(),
            PrimaryKeyR => "Primary-Key-R".into(),
            BelongsToF => "Belongs-To-F".into(),
            BelongsToR => "Belongs-To-R".into(),
            ForeignKeyTabF => "Foreign-Key-Tab-F".into(),
            ForeignKeyTabR => "Foreign-Key-Tab-R".into(),
            ForeignKeyTabB => "Foreign-Key-Tab-B".into(),
            ColumnIdentity => "Column-Identity".into(),
            TableIdentity => "Table-Identity".into(),
            QuestionDist(d) => format!("Question-Dist-{d}"),
            ColumnColumn => "Column-Column".into(),
            ColumnTable => "Column-Table".into(),
            TableColumn => "Table-Column".into(),
            TableTable => "Table-Table".into(),
            QuestionColumn(m) => format!("Question-Column-{}", m.name()),
            QuestionTable(m) => format!("Question-Table-{}", m.name()),
            ColumnQuestion(m) => format!("Column-Question-{}", m.name()),
            TableQuestion(m) => format!("Table-Question-{}", m.name()),
            ColumnValue => "Column-Value".into(),
            ValueColumn => "Value-Column".into(),
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// The relation of one ordered node pair: a base label plus the value-match flag.
///
/// The flag is only ever set on question↔column pairs, where it stands for
/// the Column-Value / Value-Column label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub label: RelationLabel,
    pub value: bool,
}

impl Relation {
    pub fn new(label: RelationLabel) -> Self {
        Relation {
            label,
            value: false,
        }
    }

    /// Deterministic composite id in `0..2 * RelationLabel::COUNT`.
    pub fn composite_id(self) -> usize {
        self.label.index() * 2 + self.value as usize
    }

    pub fn labels(self) -> Vec<RelationLabel> {
        let mut out = vec![self.label];
        if self.value {
            out.push(match self.label {
                RelationLabel::ColumnQuestion(_) => RelationLabel::ColumnValue,
                _ => RelationLabel::ValueColumn,
            });
        }
        out
    }
}

/// How relations are turned into embedding-table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationMode {
    /// One embedding row per observed (label, value flag) combination.
    Composite,
    /// Per-feature sub-embeddings (pair type, match level, value flag) laid out
    /// side by side; absent features contribute zeros.
    #[default]
    Concat,
}

const PAIR_TYPE_ROWS: usize = NUM_PAIR_TYPES;
const MATCH_ROWS: usize = 3;

impl RelationMode {
    /// Rows of the relation embedding table.
    pub fn table_rows(self) -> usize {
        match self {
            RelationMode::Composite => 2 * RelationLabel::COUNT,
            RelationMode::Concat => PAIR_TYPE_ROWS + MATCH_ROWS + 1,
        }
    }

    pub fn segments(self, width: usize) -> Result<Vec<Segment>> {
        match self {
            RelationMode::Composite => {
                if width == 0 {
                    return Err(Error::Config("relation width must be positive".into()));
                }
                Ok(vec![Segment { start: 0, width }])
            }
            RelationMode::Concat => {
                if width < 3 {
                    return Err(Error::Config(format!(
                        "concat relation embeddings need width >= 3, got {width}"
                    )));
                }
                let a = width / 2;
                let b = ((width - a) / 2).max(1);
                let c = width - a - b;
                Ok(vec![
                    Segment { start: 0, width: a },
                    Segment { start: a, width: b },
                    Segment { start: a + b, width: c },
                ])
            }
        }
    }

    fn slot_ids(self, r: Relation, out: &mut Vec<u32>) {
        match self {
            RelationMode::Composite => out.push(r.composite_id() as u32),
            RelationMode::Concat => {
                let pt = r.label.pair_type().expect("stored relations carry a pair type");
                out.push(pt as u32);
                out.push(match r.label.match_level() {
                    Some(m) => (PAIR_TYPE_ROWS + m.index()) as u32,
                    None => PairIndex::NONE,
                });
                out.push(if r.value {
                    (PAIR_TYPE_ROWS + MATCH_ROWS) as u32
                } else {
                    PairIndex::NONE
                });
            }
        }
    }
}

/// Switches that remove information from the relation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelationAblation {
    /// Every question↔schema pair becomes NoMatch without a value flag.
    pub no_linking: bool,
    /// Schema pairs fall back to the generic Column-Column etc. labels.
    pub no_schema_graph: bool,
    /// Value flags are cleared.
    pub no_value_linking: bool,
}

/// Schema-linking output consumed by the relation matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkMatrix {
    /// `columns[q][c]`
    pub columns: Vec<Vec<MatchLevel>>,
    /// `tables[q][t]`
    pub tables: Vec<Vec<MatchLevel>>,
}

/// Dense `n × n` relation grid in node order: columns, tables, question tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationMatrix {
    pub num_columns: usize,
    pub num_tables: usize,
    pub num_question: usize,
    cells: Vec<Relation>,
}

/// What a node index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Column(usize),
    Table(usize),
    Question(usize),
}

impl RelationMatrix {
    pub fn n(&self) -> usize {
        self.num_columns + self.num_tables + self.num_question
    }

    pub fn node_kind(&self, i: usize) -> NodeKind {
        let nc = self.num_columns;
        let nt = self.num_tables;
        if i < nc {
            NodeKind::Column(i)
        } else if i < nc + nt {
            NodeKind::Table(i - nc)
        } else {
            NodeKind::Question(i - nc - nt)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Relation {
        self.cells[i * self.n() + j]
    }

    pub fn composite_id(&self, i: usize, j: usize) -> usize {
        self.get(i, j).composite_id()
    }

    pub fn cells(&self) -> &[Relation] {
        &self.cells
    }

    /// Embedding lookups for the block `rows × cols` of the matrix.
    pub fn block_index(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
        mode: RelationMode,
        width: usize,
    ) -> Result<PairIndex> {
        let n = self.n();
        if rows.end > n || cols.end > n {
            return Err(Error::IndexOutOfRange {
                what: "relation block",
                index: rows.end.max(cols.end),
                len: n,
            });
        }
        let segments = mode.segments(width)?;
        let mut ids = Vec::with_capacity(rows.len() * cols.len() * segments.len());
        for i in rows.clone() {
            for j in cols.clone() {
                mode.slot_ids(self.get(i, j), &mut ids);
            }
        }
        PairIndex::new(rows.len(), cols.len(), segments, ids)
    }

    pub fn pair_index(&self, mode: RelationMode, width: usize) -> Result<Arc<PairIndex>> {
        let n = self.n();
        self.block_index(0..n, 0..n, mode, width).map(Arc::new)
    }

    /// Reorders schema nodes: `col_perm[new] = old`, `tab_perm[new] = old`.
    pub fn permuted(&self, col_perm: &[usize], tab_perm: &[usize]) -> RelationMatrix {
        let nc = self.num_columns;
        let nt = self.num_tables;
        let n = self.n();
        let old = |i: usize| {
            if i < nc {
                col_perm[i]
            } else if i < nc + nt {
                nc + tab_perm[i - nc]
            } else {
                i
            }
        };
        let mut cells = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                cells.push(self.get(old(i), old(j)));
            }
        }
        RelationMatrix {
            cells,
            ..self.clone()
        }
    }

    /// Occurrence count of every composite id.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; 2 * RelationLabel::COUNT];
        for c in &self.cells {
            h[c.composite_id()] += 1;
        }
        h
    }
}

fn schema_pair(graph: Option<&SchemaGraph>, nc: usize, i: usize, j: usize) -> RelationLabel {
    use RelationLabel::*;
    if i == j {
        return if i < nc { ColumnIdentity } else { TableIdentity };
    }
    if let Some(l) = graph.and_then(|g| g.label_at(i, j)) {
        return l;
    }
    match (i < nc, j < nc) {
        (true, true) => ColumnColumn,
        (true, false) => ColumnTable,
        (false, true) => TableColumn,
        (false, false) => TableTable,
    }
}

/// Builds the relation of every ordered node pair.
pub fn assemble_relation_matrix(
    schema: &Schema,
    question: &QuestionTokens,
    links: &LinkMatrix,
    value_links: &BTreeSet<(usize, usize)>,
    ablation: RelationAblation,
) -> Result<RelationMatrix> {
    use RelationLabel::*;
    let nc = schema.num_columns();
    let nt = schema.num_tables();
    let nq = question.len();
    if links.columns.len() != nq || links.tables.len() != nq {
        return Err(Error::IndexOutOfRange {
            what: "link matrix rows",
            index: links.columns.len().max(links.tables.len()),
            len: nq,
        });
    }
    for (row_c, row_t) in links.columns.iter().zip(&links.tables) {
        if row_c.len() != nc {
            return Err(Error::IndexOutOfRange {
                what: "link matrix columns",
                index: row_c.len(),
                len: nc,
            });
        }
        if row_t.len() != nt {
            return Err(Error::IndexOutOfRange {
                what: "link matrix tables",
                index: row_t.len(),
                len: nt,
            });
        }
    }
    for &(q, c) in value_links {
        if q >= nq {
            return Err(Error::IndexOutOfRange {
                what: "value link token",
                index: q,
                len: nq,
            });
        }
        if c >= nc {
            return Err(Error::IndexOutOfRange {
                what: "value link column",
                index: c,
                len: nc,
            });
        }
    }

    let graph = if ablation.no_schema_graph {
        None
    } else {
        Some(build_schema_graph(schema)?)
    };
    let ns = nc + nt;
    let n = ns + nq;
    let mut cells = Vec::with_capacity(n * n);
    let level = |m: MatchLevel| if ablation.no_linking { MatchLevel::NoMatch } else { m };
    let has_value = |q: usize, c: usize| {
        !ablation.no_linking && !ablation.no_value_linking && value_links.contains(&(q, c))
    };
    for i in 0..n {
        for j in 0..n {
            let rel = match (i < ns, j < ns) {
                (true, true) => Relation::new(schema_pair(graph.as_ref(), nc, i, j)),
                (false, false) => {
                    let d = clip(j as i64 - i as i64, MAX_QUESTION_DIST);
                    Relation::new(QuestionDist(d as i8))
                }
                (false, true) => {
                    let q = i - ns;
                    if j < nc {
                        Relation {
                            label: QuestionColumn(level(links.columns[q][j])),
                            value: has_value(q, j),
                        }
                    } else {
                        Relation::new(QuestionTable(level(links.tables[q][j - nc])))
                    }
                }
                (true, false) => {
                    let q = j - ns;
                    if i < nc {
                        Relation {
                            label: ColumnQuestion(level(links.columns[q][i])),
                            value: has_value(q, i),
                        }
                    } else {
                        Relation::new(TableQuestion(level(links.tables[q][i - nc])))
                    }
                }
            };
            cells.push(rel);
        }
    }
    Ok(RelationMatrix {
        num_columns: nc,
        num_tables: nt,
        num_question: nq,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema_graph::TokenizerConfig;

    fn no_links(schema: &Schema, q: &QuestionTokens) -> LinkMatrix {
        LinkMatrix {
            columns: vec![vec![MatchLevel::NoMatch; schema.num_columns()]; q.len()],
            tables: vec![vec![MatchLevel::NoMatch; schema.num_tables()]; q.len()],
        }
    }

    #[test]
    fn registry_is_closed_and_indexed() {
        let all = RelationLabel::all();
        assert_eq!(all.len(), RelationLabel::COUNT);
        for (k, l) in all.iter().enumerate() {
            assert_eq!(l.index(), k, "{l}");
        }
        let names: BTreeSet<String> = all.iter().map(|l| l.name()).collect();
        assert_eq!(names.len(), RelationLabel::COUNT);
    }

    #[test]
    fn pair_types_cover_everything_but_values() {
        let types: BTreeSet<usize> = RelationLabel::all()
            .into_iter()
            .filter_map(RelationLabel::pair_type)
            .collect();
        assert_eq!(types, (0..NUM_PAIR_TYPES).collect());
    }

    #[test]
    fn question_distance_and_identities() {
        let s = crate::fixtures::car_schema();
        let q = QuestionTokens::new("a b c d e", TokenizerConfig::default());
        let m = assemble_relation_matrix(&s, &q, &no_links(&s, &q), &BTreeSet::new(), Default::default())
            .unwrap();
        let ns = s.num_columns() + s.num_tables();
        assert_eq!(m.get(ns, ns + 4).label, RelationLabel::QuestionDist(2));
        assert_eq!(m.get(ns + 4, ns).label, RelationLabel::QuestionDist(-2));
        assert_eq!(m.get(ns + 1, ns + 1).label, RelationLabel::QuestionDist(0));
        assert_eq!(m.get(3, 3).label, RelationLabel::ColumnIdentity);
        assert_eq!(m.get(13, 13).label, RelationLabel::TableIdentity);
        assert_eq!(
            m.get(ns, 2),
            Relation {
                label: RelationLabel::QuestionColumn(MatchLevel::NoMatch),
                value: false
            }
        );
        // cylinders (cars_data) vs maker (model_list): no schema edge
        assert_eq!(m.get(2, 10).label, RelationLabel::ColumnColumn);
    }

    #[test]
    fn ablations_strip_information() {
        let s = crate::fixtures::car_schema();
        let q = QuestionTokens::new("cylinders 4", TokenizerConfig::default());
        let mut links = no_links(&s, &q);
        links.columns[0][2] = MatchLevel::ExactMatch;
        let values: BTreeSet<_> = [(1, 2)].into_iter().collect();
        let full = assemble_relation_matrix(&s, &q, &links, &values, Default::default()).unwrap();
        let ns = s.num_columns() + s.num_tables();
        assert_eq!(full.get(ns, 2).label, RelationLabel::QuestionColumn(MatchLevel::ExactMatch));
        assert!(full.get(ns + 1, 2).value);
        assert!(full.get(2, ns + 1).value);
        assert_eq!(full.get(1, 2).label, RelationLabel::SameTable);

        let a = RelationAblation {
            no_linking: true,
            ..Default::default()
        };
        let m = assemble_relation_matrix(&s, &q, &links, &values, a).unwrap();
        assert_eq!(m.get(ns, 2).label, RelationLabel::QuestionColumn(MatchLevel::NoMatch));
        assert!(!m.get(ns + 1, 2).value);

        let g = RelationAblation {
            no_schema_graph: true,
            ..Default::default()
        };
        let m = assemble_relation_matrix(&s, &q, &links, &values, g).unwrap();
        assert_eq!(m.get(1, 2).label, RelationLabel::ColumnColumn);
        assert_eq!(m.get(2, 2).label, RelationLabel::ColumnIdentity);
    }

    #[test]
    fn link_shape_is_checked() {
        let s = crate::fixtures::car_schema();
        let q = QuestionTokens::new("a b", TokenizerConfig::default());
        let mut links = no_links(&s, &q);
        links.columns.pop();
        assert!(matches!(
            assemble_relation_matrix(&s, &q, &links, &BTreeSet::new(), Default::default()),
            Err(Error::IndexOutOfRange { .. })
        ));
        let links = no_links(&s, &q);
        let bad: BTreeSet<_> = [(5, 0)].into_iter().collect();
        assert!(assemble_relation_matrix(&s, &q, &links, &bad, Default::default()).is_err());
    }

    #[test]
    fn concat_segments_partition_width() {
        for w in 3..20 {
            let segs = RelationMode::Concat.segments(w).unwrap();
            assert_eq!(segs.iter().map(|s| s.width).sum::<usize>(), w);
            assert!(segs.iter().all(|s| s.width > 0));
        }
        assert!(RelationMode::Concat.segments(2).is_err());
    }

    #[test]
    fn pair_index_ids_fit_table() {
        let s = crate::fixtures::car_schema();
        let q = QuestionTokens::new("cars with 4 cylinders", TokenizerConfig::default());
        let values: BTreeSet<_> = [(2, 2)].into_iter().collect();
        let m = assemble_relation_matrix(&s, &q, &no_links(&s, &q), &values, Default::default()).unwrap();
        for mode in [RelationMode::Composite, RelationMode::Concat] {
            let idx = m.pair_index(mode, 8).unwrap();
            assert!((idx.max_id().unwrap() as usize) < mode.table_rows());
        }
    }
}
