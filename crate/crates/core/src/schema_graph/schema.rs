use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::{normalize_words, TokenizerConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Number,
    Text,
}

impl ColumnType {
    /// Spider uses `text`, `number`, `time`, `boolean` and `others`; only `number` is numeric.
    pub fn from_spider(s: &str) -> Self {
        if s.eq_ignore_ascii_case("number") {
            ColumnType::Number
        } else {
            ColumnType::Text
        }
    }

    /// Reserved vocabulary word prepended to column labels.
    pub fn word(self) -> &'static str {
        match self {
            ColumnType::Number => "number",
            ColumnType::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub id: usize,
    pub name: String,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub id: usize,
    pub table: usize,
    pub name: String,
    pub words: Vec<String>,
    pub ty: ColumnType,
    pub is_primary_key: bool,
}

impl Column {
    /// Label words with the type word prepended.
    pub fn label(&self) -> Vec<String> {
        std::iter::once(self.ty.word().to_string())
            .chain(self.words.iter().cloned())
            .collect()
    }
}

/// Tables, typed columns, primary keys and foreign keys of one database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub columns: Vec<Column>,
    /// `(source column, target column)`
    pub foreign_keys: Vec<(usize, usize)>,
}

/// Builder input for one column: `(table id, name, type, is primary key)`.
pub type ColumnSpec<'a> = (usize, &'a str, ColumnType, bool);

impl Schema {
    /// Builds and validates a schema, tokenising names with `cfg`.
    pub fn build(
        db_id: &str,
        tables: &[&str],
        columns: &[ColumnSpec<'_>],
        foreign_keys: &[(usize, usize)],
        cfg: TokenizerConfig,
    ) -> Result<Self> {
        let schema = Schema {
            db_id: db_id.to_string(),
            tables: tables
                .iter()
                .enumerate()
                .map(|(id, name)| Table {
                    id,
                    name: name.to_string(),
                    words: normalize_words(name, cfg),
                })
                .collect(),
            columns: columns
                .iter()
                .enumerate()
                .map(|(id, &(table, name, ty, pk))| Column {
                    id,
                    table,
                    name: name.to_string(),
                    words: normalize_words(name, cfg),
                    ty,
                    is_primary_key: pk,
                })
                .collect(),
            foreign_keys: foreign_keys.to_vec(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn columns_of(&self, table: usize) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(move |c| c.table == table)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tables.iter().enumerate() {
            if t.id != i {
                return Err(Error::Schema(format!("table {} has id {}", i, t.id)));
            }
            if t.words.is_empty() {
                return Err(Error::Schema(format!("table {i} `{}` has an empty name", t.name)));
            }
        }
        for (i, c) in self.columns.iter().enumerate() {
            if c.id != i {
                return Err(Error::Schema(format!("column {} has id {}", i, c.id)));
            }
            if c.table >= self.tables.len() {
                return Err(Error::Schema(format!(
                    "column {i} `{}` references missing table {}",
                    c.name, c.table
                )));
            }
            if c.words.is_empty() {
                return Err(Error::Schema(format!("column {i} `{}` has an empty name", c.name)));
            }
        }
        let mut seen = HashSet::new();
        for &(src, dst) in &self.foreign_keys {
            self.check_foreign_key(src, dst)?;
            if !seen.insert((src, dst)) {
                return Err(Error::Schema(format!("duplicate foreign key ({src}, {dst})")));
            }
        }
        Ok(())
    }

    /// A foreign key must reference existing columns and target the primary key of another table.
    pub fn check_foreign_key(&self, src: usize, dst: usize) -> Result<()> {
        let n = self.columns.len();
        if src >= n || dst >= n {
            return Err(Error::Schema(format!(
                "dangling foreign key ({src}, {dst}): schema has {n} columns"
            )));
        }
        let (s, d) = (&self.columns[src], &self.columns[dst]);
        if s.table == d.table {
            return Err(Error::Schema(format!(
                "foreign key ({src}, {dst}) stays within table {}",
                s.table
            )));
        }
        if !d.is_primary_key {
            return Err(Error::Schema(format!(
                "foreign key ({src}, {dst}) targets non-primary-key column `{}`",
                d.name
            )));
        }
        Ok(())
    }

    pub fn table_by_name(&self, name: &str) -> Option<usize> {
        self.tables
            .iter()
            .position(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column_by_name(&self, table: usize, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.table == table && c.name.eq_ignore_ascii_case(name))
    }

    /// Stable digest of the schema structure.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("schema serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// One entry of Spider's `tables.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiderSchemaJson {
    pub db_id: String,
    pub table_names_original: Vec<String>,
    #[serde(default)]
    pub table_names: Vec<String>,
    pub column_names_original: Vec<(i64, String)>,
    #[serde(default)]
    pub column_names: Vec<(i64, String)>,
    pub column_types: Vec<String>,
    #[serde(default)]
    pub primary_keys: Vec<PrimaryKeyJson>,
    #[serde(default)]
    pub foreign_keys: Vec<(i64, i64)>,
}

/// Spider lists single-column keys as integers and composite keys as lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrimaryKeyJson {
    Single(i64),
    Composite(Vec<i64>),
}

/// Outcome of converting a Spider schema: the schema plus foreign keys that were dropped.
#[derive(Debug, Clone)]
pub struct LoadedSchema {
    pub schema: Schema,
    pub dropped_foreign_keys: Vec<(usize, usize)>,
}

impl SpiderSchemaJson {
    /// Converts to a [`Schema`]. Spider's `*` pseudo-column (index 0, table -1) is
    /// removed, so column ids shift down by one. Dangling references are errors;
    /// well-formed foreign keys that violate the primary-key rule are dropped.
    pub fn to_schema(&self, cfg: TokenizerConfig) -> Result<LoadedSchema> {
        let ncols = self.column_names_original.len();
        if self.column_types.len() != ncols {
            return Err(Error::Schema(format!(
                "{}: {} column names but {} column types",
                self.db_id,
                ncols,
                self.column_types.len()
            )));
        }
        let mut remap: Vec<Option<usize>> = vec![None; ncols];
        let mut columns = Vec::new();
        let mut pk_set = HashSet::new();
        for pk in &self.primary_keys {
            match pk {
                PrimaryKeyJson::Single(i) => {
                    pk_set.insert(*i);
                }
                PrimaryKeyJson::Composite(v) => pk_set.extend(v.iter().copied()),
            }
        }
        for (i, (table, name)) in self.column_names_original.iter().enumerate() {
            if *table < 0 {
                continue;
            }
            let table = *table as usize;
            if table >= self.table_names_original.len() {
                return Err(Error::Schema(format!(
                    "{}: column `{name}` references missing table {table}",
                    self.db_id
                )));
            }
            remap[i] = Some(columns.len());
            columns.push(Column {
                id: columns.len(),
                table,
                name: name.clone(),
                words: normalize_words(name, cfg),
                ty: ColumnType::from_spider(&self.column_types[i]),
                is_primary_key: pk_set.contains(&(i as i64)),
            });
        }
        let tables = self
            .table_names_original
            .iter()
            .enumerate()
            .map(|(id, name)| Table {
                id,
                name: name.clone(),
                words: normalize_words(name, cfg),
            })
            .collect();
        let mut schema = Schema {
            db_id: self.db_id.clone(),
            tables,
            columns,
            foreign_keys: Vec::new(),
        };
        let mut dropped = Vec::new();
        for &(s, d) in &self.foreign_keys {
            let lookup = |i: i64| -> Result<usize> {
                usize::try_from(i)
                    .ok()
                    .and_then(|i| remap.get(i).copied().flatten())
                    .ok_or_else(|| {
                        Error::Schema(format!(
                            "{}: dangling foreign key ({s}, {d})",
                            self.db_id
                        ))
                    })
            };
            let (src, dst) = (lookup(s)?, lookup(d)?);
            if schema.check_foreign_key(src, dst).is_ok() && !schema.foreign_keys.contains(&(src, dst)) {
                schema.foreign_keys.push((src, dst));
            } else {
                dropped.push((src, dst));
            }
        }
        schema.validate()?;
        Ok(LoadedSchema {
            schema,
            dropped_foreign_keys: dropped,
        })
    }

    /// Inverse of [`to_schema`](Self::to_schema) for emitting corpora in Spider layout.
    pub fn from_schema(schema: &Schema) -> Self {
        let mut column_names_original = vec![(-1, "*".to_string())];
        let mut column_names = vec![(-1, "*".to_string())];
        let mut column_types = vec!["text".to_string()];
        let mut primary_keys = Vec::new();
        for c in &schema.columns {
            column_names_original.push((c.table as i64, c.name.clone()));
            column_names.push((c.table as i64, c.words.join(" ")));
            column_types.push(c.ty.word().to_string());
            if c.is_primary_key {
                primary_keys.push(PrimaryKeyJson::Single(c.id as i64 + 1));
            }
        }
        SpiderSchemaJson {
            db_id: schema.db_id.clone(),
            table_names_original: schema.tables.iter().map(|t| t.name.clone()).collect(),
            table_names: schema.tables.iter().map(|t| t.words.join(" ")).collect(),
            column_names_original,
            column_names,
            column_types,
            primary_keys,
            foreign_keys: schema
                .foreign_keys
                .iter()
                .map(|&(s, d)| (s as i64 + 1, d as i64 + 1))
                .collect(),
        }
    }
}

/// Reads a Spider `tables.json` file.
pub fn read_tables_json(path: &Path) -> Result<Vec<SpiderSchemaJson>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car_schema() -> Schema {
        crate::fixtures::car_schema()
    }

    #[test]
    fn fk_to_non_primary_key_rejected() {
        use ColumnType::*;
        let err = Schema::build(
            "x",
            &["a", "b"],
            &[(0, "id", Number, true), (1, "ref", Number, false)],
            &[(0, 1)],
            TokenizerConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn dangling_fk_names_pair() {
        use ColumnType::*;
        let err = Schema::build(
            "x",
            &["a"],
            &[(0, "id", Number, true)],
            &[(0, 9)],
            TokenizerConfig::default(),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("(0, 9)"), "{err}");
    }

    #[test]
    fn spider_json_round_trip() {
        let s = car_schema();
        let json = SpiderSchemaJson::from_schema(&s);
        assert_eq!(json.column_names_original[0], (-1, "*".to_string()));
        let back = json.to_schema(TokenizerConfig::default()).unwrap();
        assert_eq!(back.schema, s);
        assert!(back.dropped_foreign_keys.is_empty());
    }

    #[test]
    fn spider_json_drops_fk_to_non_key() {
        let json: SpiderSchemaJson = serde_json::from_str(
            r#"{"db_id":"d","table_names_original":["a","b"],
                "column_names_original":[[-1,"*"],[0,"id"],[1,"aid"],[1,"bid"]],
                "column_types":["text","number","number","number"],
                "primary_keys":[1,3],"foreign_keys":[[2,1],[1,2]]}"#,
        )
        .unwrap();
        let loaded = json.to_schema(TokenizerConfig::default()).unwrap();
        assert_eq!(loaded.schema.foreign_keys, vec![(1, 0)]);
        assert_eq!(loaded.dropped_foreign_keys, vec![(0, 1)]);
    }

    #[test]
    fn spider_json_dangling_fk_is_error() {
        let json: SpiderSchemaJson = serde_json::from_str(
            r#"{"db_id":"d","table_names_original":["a"],
                "column_names_original":[[-1,"*"],[0,"id"]],
                "column_types":["text","number"],
                "primary_keys":[1],"foreign_keys":[[1,7]]}"#,
        )
        .unwrap();
        assert!(json.to_schema(TokenizerConfig::default()).is_err());
    }

    #[test]
    fn column_label_prepends_type() {
        let s = car_schema();
        assert_eq!(s.columns[2].label(), ["number", "cylinder"]);
    }
}
