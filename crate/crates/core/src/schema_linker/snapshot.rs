use std::collections::BTreeMap;
use std::path::Path;

use super::values::CellValue;
use crate::error::{Error, Result};
use crate::schema_graph::{ColumnType, Schema};

/// Cell values per column id.
pub type DbRows = BTreeMap<usize, Vec<CellValue>>;

fn parse_cell(raw: &str, ty: ColumnType) -> Option<CellValue> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if ty == ColumnType::Number {
        if let Ok(v) = raw.parse::<f64>() {
            if v.is_finite() {
                return Some(CellValue::Num(v));
            }
        }
    }
    Some(CellValue::Text(raw.to_string()))
}

/// Reads `<table name>.csv` (with a header row) for every table found in `dir`.
/// Missing files contribute no rows; unknown header names are skipped.
pub fn read_csv_snapshot(dir: &Path, schema: &Schema) -> Result<DbRows> {
    let mut rows: DbRows = schema.columns.iter().map(|c| (c.id, Vec::new())).collect();
    for t in &schema.tables {
        let path = dir.join(format!("{}.csv", t.name));
        if !path.exists() {
            continue;
        }
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(&path)?;
        let cols: Vec<Option<usize>> = rdr
            .headers()?
            .iter()
            .map(|h| schema.column_by_name(t.id, h.trim()))
            .collect();
        for rec in rdr.records() {
            let rec = rec?;
            for (field, col) in rec.iter().zip(&cols) {
                if let Some(c) = *col {
                    if let Some(v) = parse_cell(field, schema.columns[c].ty) {
                        rows.entry(c).or_default().push(v);
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Reads every declared column from a SQLite file opened read-only.
pub fn read_sqlite_snapshot(path: &Path, schema: &Schema) -> Result<DbRows> {
    use rusqlite::types::ValueRef;
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "database file not found"),
        ));
    }
    let conn = rusqlite::Connection::open_with_flags(path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let mut rows: DbRows = BTreeMap::new();
    for c in &schema.columns {
        let table = &schema.tables[c.table].name;
        let sql = format!(
            "SELECT \"{}\" FROM \"{}\"",
            c.name.replace('"', "\"\""),
            table.replace('"', "\"\"")
        );
        let mut stmt = conn.prepare(&sql)?;
        let mut q = stmt.query([])?;
        let cells = rows.entry(c.id).or_default();
        while let Some(row) = q.next()? {
            let v = match row.get_ref(0)? {
                ValueRef::Null | ValueRef::Blob(_) => None,
                ValueRef::Integer(i) => Some(CellValue::Num(i as f64)),
                ValueRef::Real(f) => Some(CellValue::Num(f)),
                ValueRef::Text(t) => parse_cell(&String::from_utf8_lossy(t), c.ty),
            };
            cells.extend(v);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_snapshot_maps_headers() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("cars_data.csv"),
            "id,cylinders,Horsepower,unknown\n1,4,95.0,x\n2,8,,y\n",
        )
        .unwrap();
        let s = crate::fixtures::car_schema();
        let rows = read_csv_snapshot(dir.path(), &s).unwrap();
        assert_eq!(rows[&2], vec![CellValue::Num(4.0), CellValue::Num(8.0)]);
        assert_eq!(rows[&3], vec![CellValue::Num(95.0)]);
        assert!(rows[&6].is_empty());
    }

    #[test]
    fn sqlite_snapshot_reads_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("car.sqlite");
        {
            let conn = rusqlite::Connection::open(&p).unwrap();
            conn.execute_batch(
                "CREATE TABLE cars_data (id INTEGER, mpg REAL, cylinders INTEGER, horsepower TEXT, year INTEGER);
                 INSERT INTO cars_data VALUES (1, 18.0, 4, '130', 1970);
                 CREATE TABLE car_names (make_id INTEGER, model TEXT, make TEXT, model_id INTEGER);
                 INSERT INTO car_names VALUES (1, 'chevelle', 'chevrolet chevelle', 1);
                 CREATE TABLE model_list (model_id INTEGER, maker TEXT, model TEXT);",
            )
            .unwrap();
        }
        let s = crate::fixtures::car_schema();
        let rows = read_sqlite_snapshot(&p, &s).unwrap();
        assert_eq!(rows[&2], vec![CellValue::Num(4.0)]);
        assert_eq!(rows[&3], vec![CellValue::Num(130.0)]);
        assert_eq!(rows[&6], vec![CellValue::Text("chevelle".into())]);
        assert!(rows[&10].is_empty());
    }
}
