use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema_graph::{canonical_number, normalize_words, QuestionTokens, TokenizerConfig};

pub const VALUE_INDEX_VERSION: u32 = 1;

/// One database cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Num(f64),
    Text(String),
}

impl CellValue {
    /// Normalised words of the cell; numbers are rendered canonically.
    pub fn words(&self, cfg: TokenizerConfig) -> Vec<String> {
        match self {
            CellValue::Num(v) => canonical_number(&v.to_string()).into_iter().collect(),
            CellValue::Text(s) => normalize_words(s, cfg),
        }
    }
}

/// Inverted index from normalised word to the columns whose cells contain it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueIndex {
    pub version: u32,
    pub schema_id: String,
    pub tokenizer: TokenizerConfig,
    pub words: BTreeMap<String, BTreeSet<usize>>,
    /// Cells ingested per column.
    pub row_counts: BTreeMap<usize, usize>,
}

impl ValueIndex {
    pub fn lookup(&self, word: &str) -> Option<&BTreeSet<usize>> {
        self.words.get(word)
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let idx: ValueIndex = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if idx.version != VALUE_INDEX_VERSION {
            return Err(Error::VersionMismatch {
                checkpoint: idx.version.to_string(),
                current: VALUE_INDEX_VERSION.to_string(),
            });
        }
        Ok(idx)
    }
}

/// Indexes every word of every cell, keyed by column id.
pub fn build_value_index(
    schema_id: &str,
    rows: &BTreeMap<usize, Vec<CellValue>>,
    cfg: TokenizerConfig,
) -> ValueIndex {
    let mut words: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut row_counts = BTreeMap::new();
    for (&col, cells) in rows {
        row_counts.insert(col, cells.len());
        for cell in cells {
            for w in cell.words(cfg) {
                words.entry(w).or_default().insert(col);
            }
        }
    }
    ValueIndex {
        version: VALUE_INDEX_VERSION,
        schema_id: schema_id.to_string(),
        tokenizer: cfg,
        words,
        row_counts,
    }
}

/// `(token index, column id)` for every question token found in a column's values.
pub fn value_link(question: &QuestionTokens, index: &ValueIndex) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, tok) in question.tokens.iter().enumerate() {
        if let Some(cols) = index.lookup(tok) {
            out.extend(cols.iter().map(|&c| (i, c)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TokenizerConfig {
        TokenizerConfig::default()
    }

    #[test]
    fn numbers_and_words_are_indexed() {
        let idx = build_value_index("car_1", &crate::fixtures::car_rows(), cfg());
        assert!(idx.lookup("4").unwrap().contains(&2));
        assert!(idx.lookup("toyota").unwrap().contains(&10));
        assert!(idx.lookup("31.5").unwrap().contains(&1));
    }

    #[test]
    fn multiword_cells_index_each_word() {
        let mut rows = BTreeMap::new();
        rows.insert(3, vec![CellValue::Text("New York".into())]);
        let idx = build_value_index("x", &rows, cfg());
        assert_eq!(idx.lookup("new"), Some(&BTreeSet::from([3])));
        assert_eq!(idx.lookup("york"), Some(&BTreeSet::from([3])));
    }

    #[test]
    fn empty_database_gives_empty_index() {
        let mut rows = BTreeMap::new();
        rows.insert(0, vec![]);
        assert!(build_value_index("x", &rows, cfg()).is_empty());
    }

    #[test]
    fn value_links_for_the_question() {
        let idx = build_value_index("car_1", &crate::fixtures::car_rows(), cfg());
        let q = QuestionTokens::new(crate::fixtures::CAR_QUESTION, cfg());
        let links = value_link(&q, &idx);
        assert!(links.contains(&(4, 2)));
        let q = QuestionTokens::new("zebra", cfg());
        assert!(value_link(&q, &idx).is_empty());
    }

    #[test]
    fn token_in_two_columns_gives_two_pairs() {
        let idx = build_value_index("car_1", &crate::fixtures::car_rows(), cfg());
        let q = QuestionTokens::new("chevelle", cfg());
        let links: Vec<_> = value_link(&q, &idx).into_iter().collect();
        assert_eq!(links, vec![(0, 6), (0, 7)]);
    }

    #[test]
    fn sidecar_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.json");
        let idx = build_value_index("car_1", &crate::fixtures::car_rows(), cfg());
        idx.save(&p).unwrap();
        assert_eq!(ValueIndex::load(&p).unwrap(), idx);
        let mut old = idx.clone();
        old.version = 0;
        old.save(&p).unwrap();
        assert!(matches!(ValueIndex::load(&p), Err(Error::VersionMismatch { .. })));
    }
}
