//! Command-line entry point.

mod args;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;

pub use args::{Cli, Command, Global, GraphFormat, OracleArg};

use crate::dataset_io::{
    generate_synthetic, load_schemas, load_spider_with, read_snapshot, Corpus, LoadOptions,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::evaluator::{check_compatible, evaluate, oracle_sweep};
use crate::fixtures;
use crate::schema_graph::{assemble_relation_matrix, build_schema_graph, MatchLevel, QuestionTokens, Schema};
use crate::schema_linker::{build_value_index, name_link, value_link, DbRows, ValueIndex};
use crate::sql_grammar::{render_sql, Grammar};
use crate::trainer::{build_vocab, run_gradchecks, Checkpoint, Model, TrainConfig, Trainer};
use crate::tree_decoder::{Oracle, SearchMode};

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a module error or failed check, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .try_init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Ctx {
    global: Global,
    command: &'static str,
}

impl Ctx {
    /// Creates the output directory for a run with the given config hash.
    fn run_dir(&self, hash: &str) -> Result<PathBuf> {
        let dir = match &self.global.out {
            Some(d) => d.clone(),
            None => {
                let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
                self.global.runs_dir.join(format!("{}-{hash}-{stamp}", self.command))
            }
        };
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.global.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::desk(),
        };
        if let Some(s) = self.global.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn data(&self, name: &str) -> PathBuf {
        self.global.data_dir.join(name)
    }

    fn db_dir(&self) -> Option<PathBuf> {
        let d = self.data("database");
        d.is_dir().then_some(d)
    }

    fn load_split(&self, cfg: &TrainConfig, split: &str) -> Result<Corpus> {
        let opts = LoadOptions {
            tokenizer: cfg.tokenizer,
            linker: cfg.linker,
        };
        load_spider_with(&self.data("tables.json"), &self.data(split), self.db_dir().as_deref(), opts)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json_hash<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("config serialises");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

/// Prints the resolved config and stores it in the run directory.
fn announce<T: Serialize>(dir: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(dir, e))?;
    eprintln!("resolved config:\n{text}");
    eprintln!("run directory: {}", dir.display());
    write_json(&dir.join("config.json"), value)
}

fn execute(cli: Cli) -> Result<i32> {
    let ctx = Ctx {
        command: cli.command.name(),
        global: cli.global,
    };
    match cli.command {
        Command::Graph { source, format } => graph(&ctx, &source, format),
        Command::Link { source, question } => link(&ctx, &source, &question),
        Command::GenSynthetic {
            schemas,
            dev_schemas,
            tables,
            columns,
            rows,
            examples,
            dev_examples,
            value_fraction,
            paraphrase_dev,
            implicit_tables,
        } => {
            let mut spec = match &ctx.global.config {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
                }
                None => SyntheticSpec::default(),
            };
            let set = |dst: &mut usize, v: Option<usize>| {
                if let Some(v) = v {
                    *dst = v;
                }
            };
            set(&mut spec.num_schemas, schemas);
            set(&mut spec.dev_schemas, dev_schemas);
            set(&mut spec.tables_per_schema, tables);
            set(&mut spec.columns_per_table, columns);
            set(&mut spec.rows_per_table, rows);
            set(&mut spec.num_examples, examples);
            set(&mut spec.dev_examples, dev_examples);
            if let Some(f) = value_fraction {
                spec.value_fraction = f;
            }
            spec.paraphrase_dev |= paraphrase_dev;
            spec.implicit_tables |= implicit_tables;
            if let Some(s) = ctx.global.seed {
                spec.seed = s;
            }
            let corpus = generate_synthetic(&spec)?;
            let dir = ctx.run_dir(&json_hash(&spec))?;
            announce(&dir, &spec)?;
            corpus.write(&dir)?;
            println!(
                "wrote {} train and {} dev examples over {} schemas to {}",
                corpus.train.len(),
                corpus.dev.len(),
                corpus.schemas().count(),
                dir.display()
            );
            Ok(0)
        }
        Command::Train {
            ref train,
            ref dev,
            max_steps,
            batch_size,
            align_weight,
            no_linking,
            no_graph,
            no_value_linking,
            ref resume,
        } => {
            let mut cfg = match resume {
                Some(p) => Checkpoint::load(p)?.config,
                None => ctx.train_config()?,
            };
            if let Some(s) = ctx.global.seed {
                cfg.seed = s;
            }
            if let Some(m) = max_steps {
                cfg.max_steps = m;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(w) = align_weight {
                cfg.align_weight = w;
            }
            cfg.disable_schema_linking_relations |= no_linking;
            cfg.disable_schema_graph_relations |= no_graph;
            cfg.disable_value_linking |= no_value_linking;
            cfg.validate()?;
            let dir = ctx.run_dir(&cfg.hash())?;
            announce(&dir, &cfg)?;
            let train_c = ctx.load_split(&cfg, train)?;
            let dev_c = ctx.load_split(&cfg, dev)?;
            println!(
                "train: {} examples ({} skipped), dev: {} examples ({} skipped)",
                train_c.len(),
                train_c.skipped,
                dev_c.len(),
                dev_c.skipped
            );
            let mut trainer = match resume {
                Some(p) => {
                    let mut ck = Checkpoint::load(p)?;
                    ck.config = cfg.clone();
                    Trainer::resume(&ck, &train_c, &dev_c)?
                }
                None => Trainer::new(&cfg, &train_c, &dev_c)?,
            };
            let log_path = dir.join("metrics.jsonl");
            let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let mut write_err = None;
            trainer.run(|m| {
                let line = serde_json::to_string(m).expect("metric serialises");
                if let Err(e) = writeln!(log, "{line}") {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(Error::io(&log_path, e));
            }
            trainer.checkpoint().save(&dir.join("checkpoint.json"))?;
            let best = trainer.best_checkpoint();
            best.save(&dir.join("best.json"))?;
            match &best.best {
                Some(b) => println!(
                    "trained {} steps; best dev exact match {:.4} at step {}",
                    trainer.step_count(),
                    b.dev_exact_match,
                    b.step
                ),
                None => println!("trained {} steps", trainer.step_count()),
            }
            Ok(0)
        }
        Command::Predict {
            ref checkpoint,
            ref questions,
            ref decode,
        } => predict(&ctx, checkpoint, questions, search_mode(decode.beam)?),
        Command::Eval {
            ref checkpoint,
            ref split,
            oracle,
            ref decode,
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let dir = ctx.run_dir(&ck.config_hash)?;
            announce(&dir, &ck.config)?;
            let corpus = ctx.load_split(&ck.config, split)?;
            check_compatible(&ck, &corpus.schemas)?;
            let model = ck.to_model()?;
            let report = evaluate(&model, &corpus, search_mode(decode.beam)?, oracle.into(), ctx.global.workers)?;
            report.write_dir(&dir)?;
            print!("{}", report.summary());
            Ok(0)
        }
        Command::OracleEval {
            ref checkpoint,
            ref split,
            oracle,
            ref decode,
        } => {
            let (cfg, ck) = match checkpoint {
                Some(p) => {
                    let ck = Checkpoint::load(p)?;
                    (ck.config.clone(), Some(ck))
                }
                None => (ctx.train_config()?, None),
            };
            let dir = ctx.run_dir(&cfg.hash())?;
            announce(&dir, &cfg)?;
            let corpus = ctx.load_split(&cfg, split)?;
            let model = match &ck {
                Some(ck) => {
                    check_compatible(ck, &corpus.schemas)?;
                    ck.to_model()?
                }
                None => Model::new(&cfg, build_vocab(&corpus, cfg.min_word_count))?,
            };
            let mode = search_mode(decode.beam)?;
            let report = match oracle {
                Some(o) => evaluate(&model, &corpus, mode, o.into(), ctx.global.workers)?,
                None => oracle_sweep(&model, &corpus, mode, ctx.global.workers)?,
            };
            report.write_dir(&dir)?;
            print!("{}", report.summary());
            Ok(0)
        }
        Command::Gradcheck { tolerance } => {
            let seed = ctx.global.seed.unwrap_or(0);
            let cfg = crate::trainer::gradcheck_config(seed);
            let dir = ctx.run_dir(&cfg.hash())?;
            announce(&dir, &cfg)?;
            let reports = run_gradchecks(seed)?;
            write_json(&dir.join("gradcheck.json"), &reports)?;
            let mut failed = 0;
            for r in &reports {
                let ok = r.passed(tolerance);
                failed += !ok as usize;
                println!(
                    "{:<22} {}  checked {:>5}  max rel err {:.3e}  elements over {:.0e}: {:>3}  max rel err where |g| >= 1e-6: {:.3e}",
                    r.name,
                    if ok { "PASS" } else { "FAIL" },
                    r.checked,
                    r.max_rel_err,
                    tolerance,
                    r.over_1e4,
                    r.max_rel_err_large
                );
            }
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

impl From<OracleArg> for Oracle {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::None => Oracle::None,
            OracleArg::Sketch => Oracle::Sketch,
            OracleArg::Columns => Oracle::Columns,
            OracleArg::Both => Oracle::Both,
        }
    }
}

fn search_mode(beam: usize) -> Result<SearchMode> {
    match beam {
        0 => Err(Error::Config("beam width must be at least 1".into())),
        1 => Ok(SearchMode::Greedy),
        k => Ok(SearchMode::Beam(k)),
    }
}

fn load_one_schema(ctx: &Ctx, source: &args::SchemaSource, cfg: &TrainConfig) -> Result<(Schema, Option<DbRows>)> {
    if source.example_db {
        return Ok((fixtures::car_schema(), Some(fixtures::car_rows())));
    }
    let db = source.db.as_deref().expect("clap requires --db without --example-db");
    let path = source.tables.clone().unwrap_or_else(|| ctx.data("tables.json"));
    let (mut schemas, _) = load_schemas(&path, cfg.tokenizer)?;
    let schema = schemas
        .remove(db)
        .ok_or_else(|| Error::Schema(format!("`{db}` is not in {}", path.display())))?;
    let rows = match ctx.db_dir() {
        Some(d) => read_snapshot(&d.join(db), &schema)?,
        None => None,
    };
    Ok((schema, rows))
}

fn graph(ctx: &Ctx, source: &args::SchemaSource, format: GraphFormat) -> Result<i32> {
    let cfg = ctx.train_config()?;
    let dir = ctx.run_dir(&cfg.hash())?;
    announce(&dir, &cfg)?;
    let (schema, _) = load_one_schema(ctx, source, &cfg)?;
    let g = build_schema_graph(&schema)?;
    let dot = g.to_dot(&schema);
    let json = serde_json::to_string_pretty(&g.to_json()).map_err(|e| Error::json(&dir, e))?;
    write_text(&dir.join("graph.dot"), &dot)?;
    write_text(&dir.join("graph.json"), &(json.clone() + "\n"))?;
    match format {
        GraphFormat::Dot => print!("{dot}"),
        GraphFormat::Json => println!("{json}"),
    }
    Ok(0)
}

fn qualified(schema: &Schema, c: usize) -> String {
    let col = &schema.columns[c];
    format!("{}.{}", schema.tables[col.table].name, col.name)
}

fn link(ctx: &Ctx, source: &args::SchemaSource, question: &str) -> Result<i32> {
    let cfg = ctx.train_config()?;
    let dir = ctx.run_dir(&cfg.hash())?;
    announce(&dir, &cfg)?;
    let (schema, rows) = load_one_schema(ctx, source, &cfg)?;
    let q = QuestionTokens::new(question, cfg.tokenizer);
    let links = name_link(&q, &schema, cfg.linker);
    let index = rows.map(|r| build_value_index(&schema.db_id, &r, cfg.tokenizer));
    let values = index.as_ref().map(|v| value_link(&q, v)).unwrap_or_default();
    let relations = assemble_relation_matrix(&schema, &q, &links, &values, cfg.ablation())?;

    let mut out = String::new();
    let mut rows_json = Vec::new();
    for (i, tok) in q.tokens.iter().enumerate() {
        let word = &q.raw[q.spans[i].0..q.spans[i].1];
        for (c, level) in links.columns[i].iter().enumerate() {
            if *level != MatchLevel::NoMatch {
                let target = qualified(&schema, c);
                let _ = writeln!(out, "{word}\t{tok}\tcolumn {target}\t{}", level.name());
                rows_json.push(serde_json::json!({"token": i, "word": word, "column": target, "match": level.name()}));
            }
        }
        for (t, level) in links.tables[i].iter().enumerate() {
            if *level != MatchLevel::NoMatch {
                let target = &schema.tables[t].name;
                let _ = writeln!(out, "{word}\t{tok}\ttable {target}\t{}", level.name());
                rows_json.push(serde_json::json!({"token": i, "word": word, "table": target, "match": level.name()}));
            }
        }
    }
    for &(i, c) in &values {
        let word = &q.raw[q.spans[i].0..q.spans[i].1];
        let target = qualified(&schema, c);
        let _ = writeln!(out, "{word}\t{}\tcolumn {target}\tColumnValue", q.tokens[i]);
        rows_json.push(serde_json::json!({"token": i, "word": word, "column": target, "match": "ColumnValue"}));
    }
    if index.is_none() {
        let _ = writeln!(out, "(no database snapshot: value linking disabled)");
    }
    let n = relations.n();
    let matrix: Vec<Vec<String>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let names: Vec<String> = relations.get(i, j).labels().into_iter().map(|l| l.name()).collect();
                    names.join("+")
                })
                .collect()
        })
        .collect();
    write_json(
        &dir.join("link.json"),
        &serde_json::json!({
            "db_id": schema.db_id,
            "question": q.raw,
            "tokens": q.tokens,
            "links": rows_json,
            "relations": matrix,
        }),
    )?;
    print!("{out}");
    Ok(0)
}

#[derive(serde::Deserialize)]
struct QuestionRow {
    db_id: String,
    question: String,
}

fn read_questions(path: &Path) -> Result<Vec<QuestionRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| Error::json(path, e));
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            let (db, q) = l
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected `db_id<TAB>question`", path.display(), n + 1)))?;
            Ok(QuestionRow {
                db_id: db.trim().to_string(),
                question: q.trim().to_string(),
            })
        })
        .collect()
}

fn predict(ctx: &Ctx, checkpoint: &Path, questions: &Path, mode: SearchMode) -> Result<i32> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = &ck.config;
    let dir = ctx.run_dir(&ck.config_hash)?;
    announce(&dir, cfg)?;
    let (schemas, _) = load_schemas(&ctx.data("tables.json"), cfg.tokenizer)?;
    check_compatible(&ck, &schemas)?;
    let model = ck.to_model()?;
    let rows = read_questions(questions)?;
    let mut indices: BTreeMap<String, Option<ValueIndex>> = BTreeMap::new();
    let mut results = Vec::with_capacity(rows.len());
    for row in &rows {
        let schema = schemas
            .get(&row.db_id)
            .ok_or_else(|| Error::Schema(format!("unknown database `{}`", row.db_id)))?;
        if !indices.contains_key(&row.db_id) {
            let idx = match ctx.db_dir() {
                Some(d) => read_snapshot(&d.join(&row.db_id), schema)?
                    .map(|r| build_value_index(&schema.db_id, &r, cfg.tokenizer)),
                None => None,
            };
            indices.insert(row.db_id.clone(), idx);
        }
        let values = indices[&row.db_id].as_ref();
        let outcome = model
            .predict_question(schema, values, &row.question, mode)
            .and_then(|d| Ok((render_sql(Grammar::shipped(), &d.ast, schema)?, d.log_prob)));
        match &outcome {
            Ok((sql, _)) => println!("{sql}"),
            Err(e) => println!("-- error: {e}"),
        }
        results.push(match outcome {
            Ok((sql, lp)) => serde_json::json!({"db_id": row.db_id, "question": row.question, "sql": sql, "log_prob": lp}),
            Err(e) => serde_json::json!({"db_id": row.db_id, "question": row.question, "error": e.to_string()}),
        });
    }
    write_json(&dir.join("predictions.json"), &results)?;
    Ok(0)
}
