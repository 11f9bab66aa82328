use std::collections::BTreeSet;

use ratsql::dataset_io::{generate_synthetic, load_spider, LoadOptions, SyntheticSpec};
use ratsql::sql_grammar::{delinearize, parse_sql, render_sql, Grammar};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        seed: 11,
        dev_schemas: 2,
        ..SyntheticSpec::default()
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_synthetic(&spec()).unwrap().write(a.path()).unwrap();
    generate_synthetic(&spec()).unwrap().write(b.path()).unwrap();
    let files = |d: &std::path::Path| {
        let mut out = Vec::new();
        for e in walk(d) {
            out.push((e.strip_prefix(d).unwrap().to_path_buf(), std::fs::read(&e).unwrap()));
        }
        out.sort();
        out
    };
    let fa = files(a.path());
    assert!(fa.len() > 5);
    assert_eq!(fa, files(b.path()));
}

fn walk(d: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(d).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn value_fraction_split_is_exact() {
    let s = SyntheticSpec {
        value_fraction: 0.5,
        num_examples: 50,
        ..spec()
    };
    let c = generate_synthetic(&s).unwrap();
    assert_eq!(c.train.len(), 50);
    assert_eq!(c.train.iter().filter(|e| e.tags.iter().any(|t| t == "value")).count(), 25);
}

#[test]
fn zero_columns_is_rejected() {
    let s = SyntheticSpec {
        columns_per_table: 0,
        ..spec()
    };
    assert!(generate_synthetic(&s).is_err());
}

#[test]
fn every_generated_query_round_trips() {
    let s = SyntheticSpec {
        num_examples: 300,
        dev_examples: 100,
        tables_per_schema: 4,
        ..spec()
    };
    let c = generate_synthetic(&s).unwrap();
    let g = Grammar::shipped();
    let schemas: std::collections::BTreeMap<_, _> = c.schemas().map(|s| (s.db_id.clone(), s.clone())).collect();
    for raw in c.train.iter().chain(&c.dev) {
        let schema = &schemas[&raw.db_id];
        let ast = parse_sql(&raw.query, schema).unwrap_or_else(|e| panic!("{}: {e}", raw.query));
        let text = render_sql(g, &ast, schema).unwrap();
        let again = parse_sql(&text, schema).unwrap();
        assert_eq!(ast, again, "{} vs {text}", raw.query);
        assert_eq!(render_sql(g, &again, schema).unwrap(), text);
    }
    let (train, dev) = c.to_corpora(LoadOptions::default()).unwrap();
    for ex in train.examples.iter().chain(&dev.examples) {
        let schema = &train.schemas[&ex.db_id];
        let back = delinearize(g, &ex.db_id, &ex.actions, schema.num_columns(), schema.num_tables()).unwrap();
        assert_eq!(back, ex.ast);
    }
}

#[test]
fn written_corpus_loads_back_with_value_links() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_synthetic(&spec()).unwrap();
    c.write(dir.path()).unwrap();
    let load = || {
        load_spider(
            &dir.path().join("tables.json"),
            &dir.path().join("train.json"),
            Some(&dir.path().join("database")),
        )
        .unwrap()
    };
    let a = load();
    let b = load();
    assert_eq!(a.examples, b.examples);
    assert_eq!(a.skipped, 0);
    assert_eq!(a.examples.len(), c.train.len());
    let (direct, _) = c.to_corpora(LoadOptions::default()).unwrap();
    assert_eq!(direct.examples, a.examples);
    let valued: BTreeSet<_> = a
        .examples
        .iter()
        .filter(|e| e.has_tag("value"))
        .map(|e| e.value_links.is_empty())
        .collect();
    assert_eq!(valued, BTreeSet::from([false]));
}
