use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use super::consistency::{consistency, Consistency, GroupMember};
use crate::dataset_io::Corpus;
use crate::error::{Error, Result};
use crate::schema_graph::Schema;
use crate::sql_grammar::{canonical_form, exact_match, render_sql, Grammar, SqlAst};
use crate::trainer::{Checkpoint, Model, Prepared};
use crate::tree_decoder::{Oracle, SearchMode};

/// Outcome of decoding one example.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub ast: Option<SqlAst>,
    pub log_prob: Option<f64>,
    pub error: Option<String>,
}

impl Prediction {
    pub fn of(ast: SqlAst) -> Self {
        Prediction {
            ast: Some(ast),
            log_prob: None,
            error: None,
        }
    }

    pub fn failed(error: impl Into<String>) -> Self {
        Prediction {
            ast: None,
            log_prob: None,
            error: Some(error.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub index: usize,
    pub db_id: String,
    pub question: String,
    pub gold_sql: String,
    pub predicted_sql: Option<String>,
    pub correct: bool,
    pub error: Option<String>,
    pub log_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub oracle: Oracle,
    pub scored: usize,
    pub matched: usize,
    pub accuracy: f64,
    /// Examples whose decode failed; they count as wrong.
    pub failed: usize,
    /// Corpus examples dropped at load time.
    pub skipped: usize,
    /// Accuracy under each oracle, when a sweep was run.
    pub oracle_accuracies: BTreeMap<String, f64>,
    pub consistency: Consistency,
    pub verdicts: Vec<Verdict>,
}

fn render(ast: &SqlAst, corpus: &Corpus, db_id: &str) -> Option<String> {
    let schema = corpus.schema(db_id).ok()?;
    render_sql(Grammar::shipped(), ast, schema).ok()
}

/// Scores predictions against the gold trees of `examples`.
pub fn score(corpus: &Corpus, examples: &[Prepared], predictions: &[Prediction], oracle: Oracle) -> Result<EvalReport> {
    if examples.len() != predictions.len() {
        return Err(Error::ShapeMismatch {
            op: "score",
            left: vec![examples.len()],
            right: vec![predictions.len()],
        });
    }
    let g = Grammar::shipped();
    let mut verdicts = Vec::with_capacity(examples.len());
    let mut members = Vec::with_capacity(examples.len());
    for (i, (p, pred)) in examples.iter().zip(predictions).enumerate() {
        let correct = match &pred.ast {
            Some(ast) => exact_match(g, ast, &p.ast)?,
            None => false,
        };
        members.push(GroupMember {
            key: format!("{}\u{1f}{}", p.db_id, canonical_form(g, &p.ast)),
            predicted: pred.ast.as_ref().map(|a| canonical_form(g, a)),
            correct,
        });
        verdicts.push(Verdict {
            index: i,
            db_id: p.db_id.clone(),
            question: p.question.clone(),
            gold_sql: render(&p.ast, corpus, &p.db_id).unwrap_or_default(),
            predicted_sql: pred.ast.as_ref().and_then(|a| render(a, corpus, &p.db_id)),
            correct,
            error: pred.error.clone(),
            log_prob: pred.log_prob,
        });
    }
    let matched = verdicts.iter().filter(|v| v.correct).count();
    let scored = verdicts.len();
    Ok(EvalReport {
        oracle,
        scored,
        matched,
        accuracy: if scored == 0 { 0.0 } else { matched as f64 / scored as f64 },
        failed: predictions.iter().filter(|p| p.ast.is_none()).count(),
        skipped: corpus.skipped,
        oracle_accuracies: BTreeMap::new(),
        consistency: consistency(&members),
        verdicts,
    })
}

fn predict_all(model: &Model, examples: &[Prepared], mode: SearchMode, oracle: Oracle, workers: usize) -> Vec<Prediction> {
    let one = |p: &Prepared| match model.predict(p, mode, oracle) {
        Ok(d) => Prediction {
            ast: Some(d.ast),
            log_prob: Some(d.log_prob),
            error: None,
        },
        Err(e) => Prediction::failed(e.to_string()),
    };
    let workers = workers.max(1).min(examples.len().max(1));
    if workers == 1 {
        return examples.iter().map(one).collect();
    }
    let chunk = examples.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(one).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    })
}

/// Decodes every corpus example under `oracle` and scores exact match.
pub fn evaluate(model: &Model, corpus: &Corpus, mode: SearchMode, oracle: Oracle, workers: usize) -> Result<EvalReport> {
    let examples = model.prepare_corpus(corpus)?;
    let preds = predict_all(model, &examples, mode, oracle, workers);
    score(corpus, &examples, &preds, oracle)
}

/// Runs every oracle mode; the returned report is the unassisted one with
/// all four accuracies attached.
pub fn oracle_sweep(model: &Model, corpus: &Corpus, mode: SearchMode, workers: usize) -> Result<EvalReport> {
    let examples = model.prepare_corpus(corpus)?;
    let mut accs = BTreeMap::new();
    let mut base = None;
    for oracle in Oracle::ALL {
        let preds = predict_all(model, &examples, mode, oracle, workers);
        let r = score(corpus, &examples, &preds, oracle)?;
        accs.insert(oracle.name().to_string(), r.accuracy);
        if oracle == Oracle::None {
            base = Some(r);
        }
    }
    let mut base = base.expect("sweep includes the unassisted mode");
    base.oracle_accuracies = accs;
    Ok(base)
}

/// Refuses checkpoints whose grammar, format or schemas differ from `schemas`.
pub fn check_compatible(ck: &Checkpoint, schemas: &BTreeMap<String, Schema>) -> Result<()> {
    ck.check_versions()?;
    for (db_id, schema) in schemas {
        if let Some(saved) = ck.schemas.get(db_id) {
            let current = schema.fingerprint();
            if *saved != current {
                return Err(Error::VersionMismatch {
                    checkpoint: format!("schema {db_id} {saved}"),
                    current: format!("schema {db_id} {current}"),
                });
            }
        }
    }
    Ok(())
}

pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    corpus: &Corpus,
    mode: SearchMode,
    oracle: Oracle,
    workers: usize,
) -> Result<EvalReport> {
    check_compatible(ck, &corpus.schemas)?;
    evaluate(&ck.to_model()?, corpus, mode, oracle, workers)
}

fn rate(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| format!("{:.4}", v))
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serialises")
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {}", "oracle", self.oracle.name());
        let _ = writeln!(s, "{:<28} {}", "scored", self.scored);
        let _ = writeln!(s, "{:<28} {}", "matched", self.matched);
        let _ = writeln!(s, "{:<28} {:.4}", "exact match", self.accuracy);
        let _ = writeln!(s, "{:<28} {}", "failed decodes", self.failed);
        let _ = writeln!(s, "{:<28} {}", "skipped", self.skipped);
        for (name, acc) in &self.oracle_accuracies {
            let _ = writeln!(s, "{:<28} {:.4}", format!("oracle {name}"), acc);
        }
        let _ = writeln!(s, "{:<28} {}", "paraphrase groups", self.consistency.groups);
        let _ = writeln!(s, "{:<28} {}", "exact-match consistency", rate(self.consistency.exact_match));
        let _ = writeln!(s, "{:<28} {}", "correctness consistency", rate(self.consistency.correctness));
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for v in &self.verdicts {
            w.serialize(v)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `report.json`, `summary.txt` and `verdicts.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        let text = serde_json::to_string_pretty(&self.to_json()).map_err(|e| Error::json(&json, e))?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        let summary = dir.join("summary.txt");
        let mut f = std::fs::File::create(&summary).map_err(|e| Error::io(&summary, e))?;
        f.write_all(self.summary().as_bytes()).map_err(|e| Error::io(&summary, e))?;
        self.write_csv(&dir.join("verdicts.csv"))
    }
}
