use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &str) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(pyratsql::pyratsql)(py);
        let globals = PyDict::new(py);
        globals.set_item("rs", m).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python check failed");
        }
    });
}

#[test]
fn schema_graph_and_links() {
    with_module(
        r#"
s = rs.Schema.example()
assert s.tables == ["cars_data", "car_names", "model_list"]
g = s.graph()
assert isinstance(g, dict)
links = s.link("which model has 4 cylinders")
col = s.columns.index("cars_data.cylinders")
assert {"ExactMatch", "ColumnValue"} <= {l["match"] for l in links if l.get("column") == col}
assert s.normalize_sql("select   Model from car_names") == s.normalize_sql("SELECT model FROM car_names")
"#,
    );
}

#[test]
fn config_overrides_and_errors() {
    with_module(
        r#"
c = rs.TrainConfig.full_scale(max_steps=40000)
assert abs(c.lr_at(2000) - 7.4e-4) < 1e-15
assert c.to_dict()["max_steps"] == 40000
for bad in [dict(no_such=1), dict(max_steps=0)]:
    try:
        rs.TrainConfig.desk(**bad)
    except rs.RatSqlError:
        pass
    else:
        raise AssertionError(bad)
"#,
    );
}

#[test]
fn oracle_both_is_exact_on_synthetic_dev() {
    with_module(
        r#"
train, dev = rs.Corpus.synthetic(seed=9, num_examples=12, dev_examples=8)
m = rs.Model.untrained(rs.TrainConfig.desk(), train)
assert m.evaluate(dev, oracle="both")["accuracy"] == 1.0
t = rs.Trainer(rs.TrainConfig.desk(max_steps=3, batch_size=2, eval_every=0), train, dev)
losses = [t.step()[1] for _ in range(3)]
assert t.finished and all(l > 0 for l in losses)
"#,
    );
}
