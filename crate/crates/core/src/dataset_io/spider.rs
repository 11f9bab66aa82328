use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{info, warn};

use super::example::{Corpus, Example, RawExample};
use crate::error::{Error, Result};
use crate::schema_graph::{read_tables_json, Schema, SpiderSchemaJson, TokenizerConfig};
use crate::schema_linker::{
    build_value_index, read_csv_snapshot, read_sqlite_snapshot, CellValue, DbRows, LinkerConfig, ValueIndex,
};

/// Tokenizer and linker settings applied while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub tokenizer: TokenizerConfig,
    pub linker: LinkerConfig,
}

/// Reads a Spider example file (`train_spider.json`, `dev.json`, ...).
pub fn read_examples_json(path: &Path) -> Result<Vec<RawExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Reads the schemas of a `tables.json`, keyed by database id. Schemas that
/// fail validation are returned separately with the reason.
pub fn load_schemas(path: &Path, tokenizer: TokenizerConfig) -> Result<(BTreeMap<String, Schema>, Vec<String>)> {
    let mut schemas = BTreeMap::new();
    let mut rejected = Vec::new();
    for entry in read_tables_json(path)? {
        match entry.to_schema(tokenizer) {
            Ok(loaded) => {
                if !loaded.dropped_foreign_keys.is_empty() {
                    warn!(
                        "{}: dropped {} foreign keys that do not reference a primary key",
                        entry.db_id,
                        loaded.dropped_foreign_keys.len()
                    );
                }
                schemas.insert(entry.db_id.clone(), loaded.schema);
            }
            Err(e) => {
                warn!("rejected schema {}: {e}", entry.db_id);
                rejected.push(format!("{}: {e}", entry.db_id));
            }
        }
    }
    Ok((schemas, rejected))
}

/// Cell values of one database, from `<dir>/<db_id>.sqlite` or per-table CSV files in `dir`.
pub fn read_snapshot(dir: &Path, schema: &Schema) -> Result<Option<DbRows>> {
    let sqlite = dir.join(format!("{}.sqlite", schema.db_id));
    if sqlite.exists() {
        return read_sqlite_snapshot(&sqlite, schema).map(Some);
    }
    let any_csv = schema
        .tables
        .iter()
        .any(|t| dir.join(format!("{}.csv", t.name)).exists());
    if any_csv {
        return read_csv_snapshot(dir, schema).map(Some);
    }
    Ok(None)
}

fn is_out_of_grammar(e: &Error) -> bool {
    matches!(
        e,
        Error::UnsupportedSyntax { .. } | Error::SqlParse { .. } | Error::Resolution(_) | Error::InvalidAst(_)
    )
}

/// Loads schemas, optional database snapshots and one example split.
/// Examples whose SQL falls outside the grammar are counted and skipped.
pub fn load_spider(tables: &Path, examples: &Path, db_dir: Option<&Path>) -> Result<Corpus> {
    load_spider_with(tables, examples, db_dir, LoadOptions::default())
}

pub fn load_spider_with(tables: &Path, examples: &Path, db_dir: Option<&Path>, opts: LoadOptions) -> Result<Corpus> {
    let (schemas, rejected) = load_schemas(tables, opts.tokenizer)?;
    let raws = read_examples_json(examples)?;
    let mut values = BTreeMap::new();
    if let Some(dir) = db_dir {
        for schema in schemas.values() {
            match read_snapshot(&dir.join(&schema.db_id), schema)? {
                Some(rows) => {
                    values.insert(
                        schema.db_id.clone(),
                        build_value_index(&schema.db_id, &rows, opts.tokenizer),
                    );
                }
                None => warn!("{}: no database snapshot, value linking disabled", schema.db_id),
            }
        }
    } else {
        warn!("no database directory given, value linking disabled");
    }
    let rejected_ids: Vec<&str> = rejected.iter().filter_map(|r| r.split(':').next()).collect();
    let mut corpus = Corpus {
        schemas,
        values,
        examples: Vec::with_capacity(raws.len()),
        skipped: 0,
    };
    for raw in &raws {
        let Some(schema) = corpus.schemas.get(&raw.db_id) else {
            if rejected_ids.contains(&raw.db_id.as_str()) {
                corpus.skipped += 1;
                continue;
            }
            return Err(Error::Schema(format!(
                "{}: example refers to unknown database `{}`",
                examples.display(),
                raw.db_id
            )));
        };
        match Example::from_raw(raw, schema, corpus.values.get(&raw.db_id), opts.tokenizer, opts.linker) {
            Ok(ex) => corpus.examples.push(ex),
            Err(e) if is_out_of_grammar(&e) => {
                corpus.skipped += 1;
                log::debug!("skipped `{}`: {e}", raw.query);
            }
            Err(e) => return Err(e),
        }
    }
    info!(
        "{}: loaded {} examples, skipped {} outside the grammar",
        examples.display(),
        corpus.examples.len(),
        corpus.skipped
    );
    Ok(corpus)
}

/// Writes schemas, example splits and per-table CSV snapshots in Spider layout:
/// `tables.json`, `<split>.json`, `database/<db_id>/<table>.csv`.
pub fn write_spider_layout(
    dir: &Path,
    schemas: &[Schema],
    rows: &BTreeMap<String, DbRows>,
    splits: &[(&str, &[RawExample])],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tables: Vec<SpiderSchemaJson> = schemas.iter().map(SpiderSchemaJson::from_schema).collect();
    write_json(&dir.join("tables.json"), &tables)?;
    for (name, examples) in splits {
        write_json(&dir.join(format!("{name}.json")), examples)?;
    }
    for schema in schemas {
        let Some(db) = rows.get(&schema.db_id) else {
            continue;
        };
        let db_dir = dir.join("database").join(&schema.db_id);
        fs::create_dir_all(&db_dir).map_err(|e| Error::io(&db_dir, e))?;
        for t in &schema.tables {
            let cols: Vec<_> = schema.columns_of(t.id).collect();
            let n = cols.iter().map(|c| db.get(&c.id).map_or(0, Vec::len)).max().unwrap_or(0);
            let path = db_dir.join(format!("{}.csv", t.name));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(cols.iter().map(|c| c.name.as_str()))?;
            for r in 0..n {
                w.write_record(cols.iter().map(|c| {
                    db.get(&c.id)
                        .and_then(|v| v.get(r))
                        .map(cell_text)
                        .unwrap_or_default()
                }))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn cell_text(v: &CellValue) -> String {
    match v {
        CellValue::Num(x) => crate::schema_graph::canonical_number(&x.to_string()).unwrap_or_else(|| x.to_string()),
        CellValue::Text(s) => s.clone(),
    }
}

pub(crate) fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Builds value indices for databases with rows.
pub fn value_indices(
    schemas: &BTreeMap<String, Schema>,
    rows: &BTreeMap<String, DbRows>,
    tokenizer: TokenizerConfig,
) -> BTreeMap<String, ValueIndex> {
    schemas
        .keys()
        .filter_map(|id| rows.get(id).map(|r| (id.clone(), build_value_index(id, r, tokenizer))))
        .collect()
}
