//! A small `car_1`-style database used by examples, the CLI demo and tests.

use std::collections::BTreeMap;

use crate::schema_graph::{ColumnType, Schema, TokenizerConfig};
use crate::schema_linker::CellValue;

pub const CAR_QUESTION: &str =
    "For the cars with 4 cylinders, which model has the largest horsepower?";

pub const CAR_SQL: &str = "SELECT T1.model FROM car_names AS T1 JOIN cars_data AS T2 \
     ON T1.make_id = T2.id WHERE T2.cylinders = 4 ORDER BY T2.horsepower DESC LIMIT 1";

/// Columns: 0 cars_data.id, 1 mpg, 2 cylinders, 3 horsepower, 4 year,
/// 5 car_names.make_id, 6 model, 7 make, 8 model_id,
/// 9 model_list.model_id, 10 maker, 11 model.
pub fn car_schema() -> Schema {
    use ColumnType::*;
    Schema::build(
        "car_1",
        &["cars_data", "car_names", "model_list"],
        &[
            (0, "id", Number, true),
            (0, "mpg", Number, false),
            (0, "cylinders", Number, false),
            (0, "horsepower", Number, false),
            (0, "year", Number, false),
            (1, "make_id", Number, true),
            (1, "model", Text, false),
            (1, "make", Text, false),
            (1, "model_id", Number, false),
            (2, "model_id", Number, true),
            (2, "maker", Text, false),
            (2, "model", Text, false),
        ],
        &[(0, 5), (8, 9)],
        TokenizerConfig::default(),
    )
    .expect("fixture schema is valid")
}

/// Cell values per column id.
pub fn car_rows() -> BTreeMap<usize, Vec<CellValue>> {
    use CellValue::{Num, Text};
    let mut rows = BTreeMap::new();
    rows.insert(0, vec![Num(1.0), Num(2.0), Num(3.0)]);
    rows.insert(1, vec![Num(18.0), Num(15.0), Num(31.5)]);
    rows.insert(2, vec![Num(8.0), Num(8.0), Num(4.0)]);
    rows.insert(3, vec![Num(130.0), Num(165.0), Num(95.0)]);
    rows.insert(4, vec![Num(1970.0), Num(1970.0), Num(1974.0)]);
    rows.insert(5, vec![Num(1.0), Num(2.0), Num(3.0)]);
    rows.insert(
        6,
        vec![Text("chevelle".into()), Text("skylark".into()), Text("corolla".into())],
    );
    rows.insert(
        7,
        vec![
            Text("chevrolet chevelle malibu".into()),
            Text("buick skylark 320".into()),
            Text("toyota corolla".into()),
        ],
    );
    rows.insert(8, vec![Num(1.0), Num(2.0), Num(3.0)]);
    rows.insert(9, vec![Num(1.0), Num(2.0), Num(3.0)]);
    rows.insert(
        10,
        vec![Text("gm".into()), Text("gm".into()), Text("toyota".into())],
    );
    rows.insert(
        11,
        vec![Text("chevrolet".into()), Text("buick".into()), Text("toyota".into())],
    );
    rows
}
