use std::path::Path;
use std::process::{Command, Output};

use ratsql::fixtures::CAR_QUESTION;

fn ratsql(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratsql"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_corpus(dir: &Path) {
    let o = ratsql(
        dir,
        &[
            "--seed", "3", "--out", "data", "gen-synthetic", "--schemas", "3", "--examples", "24", "--dev-examples", "8",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn link_reports_exact_and_value_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ratsql(tmp.path(), &["--out", "run", "link", "--example-db", "--question", CAR_QUESTION]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.contains("cars_data.cylinders") && l.ends_with("ExactMatch")));
    assert!(out.lines().any(|l| l.contains("cars_data.horsepower") && l.ends_with("ExactMatch")));
    assert!(out.lines().any(|l| l.starts_with("4\t") && l.ends_with("ColumnValue")));
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/link.json")).unwrap()).unwrap();
    let n = saved["relations"].as_array().unwrap().len();
    assert!(n > saved["tokens"].as_array().unwrap().len());
    assert!(tmp.path().join("run/config.json").exists());
}

#[test]
fn graph_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let dot = ratsql(tmp.path(), &["--out", "g", "graph", "--example-db"]);
    assert!(dot.status.success());
    assert!(stdout(&dot).starts_with("digraph"));
    let json = ratsql(tmp.path(), &["--out", "g", "graph", "--example-db", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert!(v.is_object());
}

#[test]
fn oracle_both_is_perfect_on_synthetic_dev() {
    let tmp = tempfile::tempdir().unwrap();
    gen_corpus(tmp.path());
    let o = ratsql(tmp.path(), &["--data-dir", "data", "--out", "o", "oracle-eval", "--oracle", "both"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert!(stdout(&o).contains("exact match                  1.0000"));
}

#[test]
fn train_eval_predict_round() {
    let tmp = tempfile::tempdir().unwrap();
    gen_corpus(tmp.path());
    let train = |out: &str| {
        let o = ratsql(
            tmp.path(),
            &["--data-dir", "data", "--out", out, "train", "--max-steps", "6", "--batch-size", "4"],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(tmp.path().join(out).join("metrics.jsonl")).unwrap()
    };
    let a = train("t1");
    assert_eq!(a.lines().count(), 6);
    assert_eq!(a, train("t2"));

    let o = ratsql(tmp.path(), &["--data-dir", "data", "--out", "e", "eval", "--checkpoint", "t1/checkpoint.json"]);
    assert!(o.status.success());
    assert!(tmp.path().join("e/verdicts.csv").exists());

    let dbs: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("data/tables.json")).unwrap()).unwrap();
    let db = dbs[0]["db_id"].as_str().unwrap().to_string();
    std::fs::write(tmp.path().join("q.tsv"), format!("{db}\tlist every name\n")).unwrap();
    let o = ratsql(
        tmp.path(),
        &["--data-dir", "data", "--out", "p", "predict", "--checkpoint", "t1/checkpoint.json", "--questions", "q.tsv"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 1);
    let preds: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("p/predictions.json")).unwrap()).unwrap();
    assert_eq!(preds[0]["db_id"], db.as_str());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ratsql(tmp.path(), &["--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ratsql(tmp.path(), &["link", "--question", "x"]).status.code(), Some(2));
    let missing = ratsql(tmp.path(), &["--data-dir", "nowhere", "--out", "x", "graph", "--db", "a"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));
    assert_eq!(ratsql(tmp.path(), &["--help"]).status.code(), Some(0));
}
