//! Python bindings: schemas, linking, synthetic corpora, training, decoding
//! and evaluation.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ratsql::dataset_io::{self, LoadOptions, SyntheticSpec};
use ratsql::evaluator;
use ratsql::fixtures;
use ratsql::schema_graph::{self as sg, MatchLevel, QuestionTokens, TokenizerConfig};
use ratsql::schema_linker::{self as sl, LinkerConfig, ValueIndex};
use ratsql::sql_grammar::{render_sql, Grammar};
use ratsql::trainer;
use ratsql::tree_decoder::{Oracle, SearchMode};

create_exception!(pyratsql, RatSqlError, PyException);

fn err(e: ratsql::Error) -> PyErr {
    RatSqlError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    RatSqlError::new_err(e.to_string())
}

/// Converts a JSON value to native Python objects.
fn to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_kwargs<T: serde::de::DeserializeOwned + serde::Serialize>(
    py: Python<'_>,
    base: T,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<T> {
    let Some(kw) = kwargs else { return Ok(base) };
    let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
    let overrides: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    let mut merged = serde_json::to_value(&base).map_err(json_err)?;
    for (k, v) in overrides.as_object().into_iter().flatten() {
        if merged.get(k).is_none() {
            return Err(RatSqlError::new_err(format!("unknown field `{k}`")));
        }
        merged[k] = v.clone();
    }
    serde_json::from_value(merged).map_err(json_err)
}

fn oracle(name: &str) -> PyResult<Oracle> {
    Oracle::parse(name).ok_or_else(|| RatSqlError::new_err(format!("unknown oracle `{name}`")))
}

fn mode(beam: usize) -> PyResult<SearchMode> {
    match beam {
        0 => Err(RatSqlError::new_err("beam width must be at least 1")),
        1 => Ok(SearchMode::Greedy),
        k => Ok(SearchMode::Beam(k)),
    }
}

/// A database schema with optional cell values for value linking.
#[pyclass(name = "Schema", module = "pyratsql", skip_from_py_object)]
#[derive(Clone)]
struct PySchema {
    inner: sg::Schema,
    values: Option<ValueIndex>,
}

#[pymethods]
impl PySchema {
    /// The three-table car database with a few rows.
    #[staticmethod]
    fn example() -> Self {
        let inner = fixtures::car_schema();
        let values = sl::build_value_index(&inner.db_id, &fixtures::car_rows(), TokenizerConfig::default());
        PySchema {
            inner,
            values: Some(values),
        }
    }

    /// Loads `db_id` from a Spider `tables.json`. Rows are read from
    /// `database_dir/db_id` when given.
    #[staticmethod]
    #[pyo3(signature = (tables, db_id, database_dir=None))]
    fn load(tables: PathBuf, db_id: &str, database_dir: Option<PathBuf>) -> PyResult<Self> {
        let tok = TokenizerConfig::default();
        let (mut all, _) = dataset_io::load_schemas(&tables, tok).map_err(err)?;
        let inner = all
            .remove(db_id)
            .ok_or_else(|| RatSqlError::new_err(format!("`{db_id}` is not in {}", tables.display())))?;
        let values = match database_dir {
            Some(d) => dataset_io::read_snapshot(&d.join(db_id), &inner)
                .map_err(err)?
                .map(|rows| sl::build_value_index(db_id, &rows, tok)),
            None => None,
        };
        Ok(PySchema { inner, values })
    }

    #[getter]
    fn db_id(&self) -> String {
        self.inner.db_id.clone()
    }

    #[getter]
    fn tables(&self) -> Vec<String> {
        self.inner.tables.iter().map(|t| t.name.clone()).collect()
    }

    /// Qualified `table.column` names.
    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner
            .columns
            .iter()
            .map(|c| format!("{}.{}", self.inner.tables[c.table].name, c.name))
            .collect()
    }

    #[getter]
    fn foreign_keys(&self) -> Vec<(usize, usize)> {
        self.inner.foreign_keys.clone()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Schema graph as DOT text.
    fn graph_dot(&self) -> PyResult<String> {
        Ok(sg::build_schema_graph(&self.inner).map_err(err)?.to_dot(&self.inner))
    }

    /// Schema graph as nested Python objects.
    fn graph(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &sg::build_schema_graph(&self.inner).map_err(err)?.to_json())
    }

    /// Name and value links of `question` as a list of dicts.
    fn link(&self, py: Python<'_>, question: &str) -> PyResult<Py<PyAny>> {
        let q = QuestionTokens::new(question, TokenizerConfig::default());
        let links = sl::name_link(&q, &self.inner, LinkerConfig::default());
        let mut out = Vec::new();
        for (i, tok) in q.tokens.iter().enumerate() {
            for (c, level) in links.columns[i].iter().enumerate() {
                if *level != MatchLevel::NoMatch {
                    out.push(serde_json::json!({"token": i, "word": tok, "column": c, "match": level.name()}));
                }
            }
            for (t, level) in links.tables[i].iter().enumerate() {
                if *level != MatchLevel::NoMatch {
                    out.push(serde_json::json!({"token": i, "word": tok, "table": t, "match": level.name()}));
                }
            }
        }
        if let Some(v) = &self.values {
            for (i, c) in sl::value_link(&q, v) {
                out.push(serde_json::json!({"token": i, "word": q.tokens[i], "column": c, "match": "ColumnValue"}));
            }
        }
        to_py(py, &serde_json::Value::Array(out))
    }

    /// Relation label names for every node pair: question tokens first,
    /// then columns, then tables.
    fn relations(&self, question: &str) -> PyResult<Vec<Vec<String>>> {
        let q = QuestionTokens::new(question, TokenizerConfig::default());
        let links = sl::name_link(&q, &self.inner, LinkerConfig::default());
        let values = self.values.as_ref().map(|v| sl::value_link(&q, v)).unwrap_or_default();
        let m = sg::assemble_relation_matrix(&self.inner, &q, &links, &values, Default::default()).map_err(err)?;
        Ok((0..m.n())
            .map(|i| {
                (0..m.n())
                    .map(|j| {
                        let names: Vec<String> = m.get(i, j).labels().into_iter().map(|l| l.name()).collect();
                        names.join("+")
                    })
                    .collect()
            })
            .collect())
    }

    /// Parses SQL against this schema and renders it back in canonical form.
    fn normalize_sql(&self, sql: &str) -> PyResult<String> {
        let ast = ratsql::sql_grammar::parse_sql(sql, &self.inner).map_err(err)?;
        render_sql(Grammar::shipped(), &ast, &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Schema({:?}, {} tables, {} columns)",
            self.inner.db_id,
            self.inner.tables.len(),
            self.inner.columns.len()
        )
    }
}

/// Training hyperparameters.
#[pyclass(name = "TrainConfig", module = "pyratsql", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: trainer::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Desk-scale preset; keyword arguments override fields.
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn desk(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let inner = from_kwargs(py, trainer::TrainConfig::desk(), kwargs)?;
        inner.validate().map_err(err)?;
        Ok(PyTrainConfig { inner })
    }

    /// Full-scale preset; keyword arguments override fields.
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn full_scale(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let inner = from_kwargs(py, trainer::TrainConfig::full_scale(), kwargs)?;
        inner.validate().map_err(err)?;
        Ok(PyTrainConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: trainer::TrainConfig::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &serde_json::to_value(&self.inner).map_err(json_err)?)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// Learning rate at `step`.
    fn lr_at(&self, step: usize) -> PyResult<f64> {
        trainer::lr_at(step, &self.inner).map_err(err)
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.max_steps
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

/// Examples over a set of schemas.
#[pyclass(name = "Corpus", module = "pyratsql", skip_from_py_object)]
#[derive(Clone)]
struct PyCorpus {
    inner: dataset_io::Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Generates `(train, dev)` corpora; keyword arguments override the
    /// generator defaults (`num_schemas`, `num_examples`, `seed`, ...).
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn synthetic(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<(Self, Self)> {
        let spec: SyntheticSpec = from_kwargs(py, SyntheticSpec::default(), kwargs)?;
        let (train, dev) = dataset_io::generate_synthetic(&spec)
            .and_then(|c| c.to_corpora(LoadOptions::default()))
            .map_err(err)?;
        Ok((PyCorpus { inner: train }, PyCorpus { inner: dev }))
    }

    /// Loads a Spider-layout split from `data_dir` (with `tables.json` and
    /// optionally `database/`).
    #[staticmethod]
    fn load(data_dir: PathBuf, split: &str) -> PyResult<Self> {
        let db = data_dir.join("database");
        let inner = dataset_io::load_spider_with(
            &data_dir.join("tables.json"),
            &data_dir.join(split),
            db.is_dir().then_some(db.as_path()),
            LoadOptions::default(),
        )
        .map_err(err)?;
        Ok(PyCorpus { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn skipped(&self) -> usize {
        self.inner.skipped
    }

    #[getter]
    fn db_ids(&self) -> Vec<String> {
        self.inner.schemas.keys().cloned().collect()
    }

    /// `(db_id, question, sql)` of example `i`.
    fn example(&self, i: usize) -> PyResult<(String, String, String)> {
        let ex = self
            .inner
            .examples
            .get(i)
            .ok_or_else(|| RatSqlError::new_err(format!("example {i} out of range")))?;
        Ok((ex.db_id.clone(), ex.question.raw.clone(), ex.sql.clone()))
    }

    fn schema(&self, db_id: &str) -> PyResult<PySchema> {
        Ok(PySchema {
            inner: self.inner.schema(db_id).map_err(err)?.clone(),
            values: self.inner.values.get(db_id).cloned(),
        })
    }
}

/// A trained parser.
#[pyclass(name = "Model", module = "pyratsql")]
struct PyModel {
    model: trainer::Model,
    checkpoint: Option<trainer::Checkpoint>,
}

#[pymethods]
impl PyModel {
    /// Untrained model with a vocabulary built from `corpus`.
    #[staticmethod]
    fn untrained(config: &PyTrainConfig, corpus: &PyCorpus) -> PyResult<Self> {
        let vocab = trainer::build_vocab(&corpus.inner, config.inner.min_word_count);
        Ok(PyModel {
            model: trainer::Model::new(&config.inner, vocab).map_err(err)?,
            checkpoint: None,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = trainer::Checkpoint::load(&path).map_err(err)?;
        Ok(PyModel {
            model: ck.to_model().map_err(err)?,
            checkpoint: Some(ck),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        match &self.checkpoint {
            Some(ck) => ck.save(&path).map_err(err),
            None => Err(RatSqlError::new_err("only trained models can be saved")),
        }
    }

    /// Predicted SQL for `question` over `schema`.
    #[pyo3(signature = (schema, question, beam=1))]
    fn predict(&self, schema: &PySchema, question: &str, beam: usize) -> PyResult<String> {
        let d = self
            .model
            .predict_question(&schema.inner, schema.values.as_ref(), question, mode(beam)?)
            .map_err(err)?;
        render_sql(Grammar::shipped(), &d.ast, &schema.inner).map_err(err)
    }

    /// Evaluation report as a dict. `oracle` is one of none, sketch,
    /// columns, both.
    #[pyo3(signature = (corpus, oracle="none", beam=1, workers=1))]
    fn evaluate(&self, py: Python<'_>, corpus: &PyCorpus, oracle: &str, beam: usize, workers: usize) -> PyResult<Py<PyAny>> {
        if let Some(ck) = &self.checkpoint {
            evaluator::check_compatible(ck, &corpus.inner.schemas).map_err(err)?;
        }
        let o = self::oracle(oracle)?;
        let m = mode(beam)?;
        let report = py
            .detach(|| evaluator::evaluate(&self.model, &corpus.inner, m, o, workers))
            .map_err(err)?;
        to_py(py, &report.to_json())
    }

    /// Accuracy under every oracle.
    #[pyo3(signature = (corpus, workers=1))]
    fn oracle_sweep(&self, py: Python<'_>, corpus: &PyCorpus, workers: usize) -> PyResult<Py<PyAny>> {
        let report = py
            .detach(|| evaluator::oracle_sweep(&self.model, &corpus.inner, SearchMode::Greedy, workers))
            .map_err(err)?;
        to_py(py, &serde_json::to_value(&report.oracle_accuracies).map_err(json_err)?)
    }
}

/// Step-wise trainer.
#[pyclass(name = "Trainer", module = "pyratsql", unsendable)]
struct PyTrainer {
    inner: trainer::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    fn new(config: &PyTrainConfig, train: &PyCorpus, dev: &PyCorpus) -> PyResult<Self> {
        Ok(PyTrainer {
            inner: trainer::Trainer::new(&config.inner, &train.inner, &dev.inner).map_err(err)?,
        })
    }

    /// Runs one optimisation step; returns `(step, loss, lr)`.
    fn step(&mut self) -> PyResult<(usize, f64, f64)> {
        let r = self.inner.train_step().map_err(err)?;
        Ok((r.step, r.loss, r.lr))
    }

    /// Trains to completion and returns the metric records.
    fn run(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let mut records = Vec::new();
        self.inner
            .run(|m| records.push(serde_json::to_value(m).expect("metric serialises")))
            .map_err(err)?;
        to_py(py, &serde_json::Value::Array(records))
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.step_count()
    }

    /// Snapshot of the current weights as a model.
    fn model(&self) -> PyResult<PyModel> {
        let ck = self.inner.checkpoint();
        Ok(PyModel {
            model: ck.to_model().map_err(err)?,
            checkpoint: Some(ck),
        })
    }
}

/// Runs the finite-difference gradient checks; returns one dict per check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Py<PyAny>> {
    let reports = py.detach(|| trainer::run_gradchecks(seed)).map_err(err)?;
    to_py(py, &serde_json::to_value(&reports).map_err(json_err)?)
}

#[pymodule]
pub fn pyratsql(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RatSqlError", m.py().get_type::<RatSqlError>())?;
    m.add_class::<PySchema>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
