use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::example::{Corpus, Example, RawExample};
use super::spider::{value_indices, write_spider_layout, LoadOptions};
use crate::error::{Error, Result};
use crate::numerics::derive_rng;
use crate::schema_graph::{ColumnType, Schema};
use crate::schema_linker::{CellValue, DbRows};

const TABLE_WORDS: &[&str] = &[
    "singer", "concert", "stadium", "teacher", "course", "museum", "painting", "airline", "airport", "flight",
    "hospital", "doctor", "library", "book", "author", "farm", "orchestra", "conductor", "school", "player",
    "team", "store", "product", "movie", "director", "ship", "captain", "hotel", "restaurant", "gallery",
];

const TEXT_WORDS: &[&str] = &[
    "color", "title", "genre", "country", "city", "nickname", "label", "brand", "style", "owner", "language",
    "region", "category", "material", "flavor", "shape", "motto", "slogan", "theme", "venue", "sponsor",
    "mascot", "founder", "district",
];

const NUMBER_WORDS: &[&str] = &[
    "age", "height", "weight", "price", "rank", "score", "year", "capacity", "budget", "length", "width", "depth",
    "salary", "population", "area", "speed", "duration", "rating", "volume", "distance", "floor", "grade",
    "bonus", "quota",
];

const VALUE_WORDS: &[&str] = &[
    "amber", "basil", "cobalt", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "jasper", "kestrel",
    "lotus", "maple", "nectar", "onyx", "pepper", "quartz", "raven", "saffron", "tundra", "umber", "violet",
    "willow", "xenon", "yarrow", "zephyr", "acorn", "birch", "cedar", "dune", "elm", "fern", "grove", "hazel",
    "iris", "juniper", "kelp", "lilac", "moss", "nutmeg", "olive", "pine", "quill", "reed", "sage", "thyme",
    "vine", "wren", "yew", "zinnia", "apricot", "bramble", "clover", "dahlia", "fennel", "ginger", "heather",
    "ivy", "jade", "kiwi", "lemon", "mango", "nova", "orchid", "poppy", "rowan", "sorrel", "tulip", "velvet",
    "walnut",
];

/// Question/SQL template families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// A column of a named table.
    Select,
    /// Row count of a named table.
    Count,
    /// Filter on a named text column; the table is not mentioned.
    WhereText,
    /// Filter whose column is identified only by the value.
    WhereValue,
    Superlative,
    Aggregate,
    Compare,
    Group,
    /// Projection and filter in two tables linked by a foreign key.
    Join,
    JoinCount,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 10] = [
        TemplateKind::Select,
        TemplateKind::Count,
        TemplateKind::WhereText,
        TemplateKind::WhereValue,
        TemplateKind::Superlative,
        TemplateKind::Aggregate,
        TemplateKind::Compare,
        TemplateKind::Group,
        TemplateKind::Join,
        TemplateKind::JoinCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Select => "select",
            TemplateKind::Count => "count",
            TemplateKind::WhereText => "where_text",
            TemplateKind::WhereValue => "where_value",
            TemplateKind::Superlative => "superlative",
            TemplateKind::Aggregate => "aggregate",
            TemplateKind::Compare => "compare",
            TemplateKind::Group => "group",
            TemplateKind::Join => "join",
            TemplateKind::JoinCount => "join_count",
        }
    }

    fn needs_join(self) -> bool {
        matches!(self, TemplateKind::Join | TemplateKind::JoinCount)
    }
}

/// Parameters of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Schemas used by the training split.
    pub num_schemas: usize,
    /// Extra schemas used only by the dev split; 0 draws dev from the training schemas.
    pub dev_schemas: usize,
    pub tables_per_schema: usize,
    /// Text and number columns per table, besides keys.
    pub columns_per_table: usize,
    pub rows_per_table: usize,
    pub num_examples: usize,
    pub dev_examples: usize,
    /// Share of examples whose filter column is named only through its value.
    pub value_fraction: f64,
    /// Emit every dev query under each of its phrasings.
    pub paraphrase_dev: bool,
    /// Projection and grouping questions leave the table unnamed, so the
    /// table has to be inferred from the column.
    pub implicit_tables: bool,
    pub templates: Vec<TemplateKind>,
    /// Words used as text cell values.
    pub values: Vec<String>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_schemas: 3,
            dev_schemas: 0,
            tables_per_schema: 3,
            columns_per_table: 3,
            rows_per_table: 4,
            num_examples: 50,
            dev_examples: 20,
            value_fraction: 0.2,
            paraphrase_dev: false,
            implicit_tables: false,
            templates: TemplateKind::ALL.to_vec(),
            values: VALUE_WORDS.iter().map(|s| s.to_string()).collect(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_schemas == 0 {
            return bad("num_schemas must be positive".into());
        }
        if self.tables_per_schema == 0 || self.tables_per_schema > TABLE_WORDS.len() {
            return bad(format!("tables_per_schema must be in 1..={}", TABLE_WORDS.len()));
        }
        if self.columns_per_table < 2 {
            return bad("columns_per_table must be at least 2 (one text, one number)".into());
        }
        let (text, num) = self.column_split();
        let t = self.tables_per_schema;
        if t * text > TEXT_WORDS.len() || t * num > NUMBER_WORDS.len() {
            return bad(format!("{t} tables × {} columns exceed the column-name pool", self.columns_per_table));
        }
        if self.rows_per_table == 0 {
            return bad("rows_per_table must be positive".into());
        }
        if t * text * self.rows_per_table > self.values.len() {
            return bad(format!(
                "{} distinct values needed per schema, {} available",
                t * text * self.rows_per_table,
                self.values.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.value_fraction) || self.value_fraction.is_nan() {
            return bad(format!("value_fraction {} outside [0, 1]", self.value_fraction));
        }
        if self.templates.is_empty() && self.value_fraction < 1.0 {
            return bad("no templates enabled".into());
        }
        if self.num_examples == 0 {
            return bad("num_examples must be positive".into());
        }
        Ok(())
    }

    fn column_split(&self) -> (usize, usize) {
        let text = self.columns_per_table.div_ceil(2);
        (text, self.columns_per_table - text)
    }

    /// Number of examples per split that require value linking.
    pub fn value_count(&self, n: usize) -> usize {
        (self.value_fraction * n as f64).round() as usize
    }
}

/// A generated corpus in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub train_schemas: Vec<Schema>,
    pub dev_schemas: Vec<Schema>,
    pub rows: BTreeMap<String, DbRows>,
    pub train: Vec<RawExample>,
    pub dev: Vec<RawExample>,
}

impl SyntheticCorpus {
    pub fn schemas(&self) -> impl Iterator<Item = &Schema> {
        self.train_schemas.iter().chain(&self.dev_schemas)
    }

    /// Writes `tables.json`, `train.json`, `dev.json`, `spec.json` and CSV snapshots.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let schemas: Vec<Schema> = self.schemas().cloned().collect();
        write_spider_layout(dir, &schemas, &self.rows, &[("train", &self.train), ("dev", &self.dev)])?;
        super::spider::write_json(&dir.join("spec.json"), &self.spec)
    }

    /// Parsed train and dev corpora over all schemas.
    pub fn to_corpora(&self, opts: LoadOptions) -> Result<(Corpus, Corpus)> {
        let schemas: BTreeMap<String, Schema> = self.schemas().map(|s| (s.db_id.clone(), s.clone())).collect();
        let values = value_indices(&schemas, &self.rows, opts.tokenizer);
        let build = |raws: &[RawExample]| -> Result<Corpus> {
            let examples = raws
                .iter()
                .map(|r| {
                    let schema = &schemas[&r.db_id];
                    Example::from_raw(r, schema, values.get(&r.db_id), opts.tokenizer, opts.linker)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Corpus {
                schemas: schemas.clone(),
                values: values.clone(),
                examples,
                skipped: 0,
            })
        };
        Ok((build(&self.train)?, build(&self.dev)?))
    }
}

struct GenTable {
    name: String,
    text: Vec<usize>,
    number: Vec<usize>,
}

struct GenSchema {
    schema: Schema,
    tables: Vec<GenTable>,
    /// `(child table, parent table, child fk column)`
    links: Vec<(usize, usize, usize)>,
    values: BTreeMap<usize, Vec<String>>,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.random_range(0..xs.len())]
}

fn gen_schema(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, db_id: &str) -> Result<(GenSchema, DbRows)> {
    let t = spec.tables_per_schema;
    let (n_text, n_num) = spec.column_split();
    let mut tables_words: Vec<&str> = TABLE_WORDS.to_vec();
    tables_words.shuffle(rng);
    let mut text_words: Vec<&str> = TEXT_WORDS.to_vec();
    text_words.shuffle(rng);
    let mut num_words: Vec<&str> = NUMBER_WORDS.to_vec();
    num_words.shuffle(rng);
    let mut values: Vec<String> = spec.values.clone();
    values.shuffle(rng);

    let names: Vec<&str> = tables_words[..t].to_vec();
    let parents: Vec<Option<usize>> = (0..t).map(|i| (i > 0).then(|| rng.random_range(0..i))).collect();

    let mut specs: Vec<(usize, String, ColumnType, bool)> = Vec::new();
    let mut fk_cols = Vec::new();
    let mut layout = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        specs.push((ti, "id".into(), ColumnType::Number, true));
        if let Some(p) = parents[ti] {
            fk_cols.push((ti, p, specs.len()));
            specs.push((ti, format!("{}_id", names[p]), ColumnType::Number, false));
        }
        let mut text = Vec::new();
        let mut number = Vec::new();
        for k in 0..n_text {
            text.push(specs.len());
            specs.push((ti, text_words[ti * n_text + k].into(), ColumnType::Text, false));
        }
        for k in 0..n_num {
            number.push(specs.len());
            specs.push((ti, num_words[ti * n_num + k].into(), ColumnType::Number, false));
        }
        layout.push(GenTable {
            name: name.to_string(),
            text,
            number,
        });
    }
    let col_specs: Vec<(usize, &str, ColumnType, bool)> =
        specs.iter().map(|(t, n, ty, pk)| (*t, n.as_str(), *ty, *pk)).collect();
    let pk_of = |table: usize| specs.iter().position(|s| s.0 == table && s.3).expect("every table has an id");
    let fks: Vec<(usize, usize)> = fk_cols.iter().map(|&(_, p, c)| (c, pk_of(p))).collect();
    let schema = Schema::build(db_id, &names, &col_specs, &fks, Default::default())?;

    let r = spec.rows_per_table;
    let mut rows: DbRows = BTreeMap::new();
    let mut cell_words: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut next_value = 0;
    for (ti, table) in layout.iter().enumerate() {
        rows.insert(pk_of(ti), (1..=r).map(|i| CellValue::Num(i as f64)).collect());
        if let Some(&(_, _, c)) = fk_cols.iter().find(|f| f.0 == ti) {
            rows.insert(c, (0..r).map(|_| CellValue::Num(rng.random_range(1..=r) as f64)).collect());
        }
        for &c in &table.text {
            let words: Vec<String> = values[next_value..next_value + r].to_vec();
            next_value += r;
            rows.insert(c, words.iter().map(|w| CellValue::Text(w.clone())).collect());
            cell_words.insert(c, words);
        }
        for &c in &table.number {
            rows.insert(c, (0..r).map(|_| CellValue::Num(rng.random_range(1..=99) as f64)).collect());
        }
    }
    Ok((
        GenSchema {
            schema,
            tables: layout,
            links: fk_cols,
            values: cell_words,
        },
        rows,
    ))
}

struct Generated {
    phrasings: Vec<String>,
    sql: String,
    tags: Vec<String>,
}

fn col_name(s: &Schema, c: usize) -> &str {
    &s.columns[c].name
}

fn words_of(s: &Schema, c: usize) -> String {
    s.columns[c].words.join(" ")
}

fn gen_example(g: &GenSchema, kind: TemplateKind, implicit: bool, rng: &mut ChaCha8Rng) -> Generated {
    let s = &g.schema;
    let ti = rng.random_range(0..g.tables.len());
    let tab = &g.tables[ti];
    let t = tab.name.as_str();
    let tw = s.tables[ti].words.join(" ");
    let any_col = |rng: &mut ChaCha8Rng, table: &GenTable| {
        let all: Vec<usize> = table.text.iter().chain(&table.number).copied().collect();
        *pick(rng, &all)
    };
    let mut tags = vec![kind.name().to_string()];
    let (phrasings, sql) = match kind {
        TemplateKind::Select => {
            let c = any_col(rng, tab);
            let (cw, cn) = (words_of(s, c), col_name(s, c));
            let phrasings = if implicit {
                vec![format!("list every {cw}"), format!("what are all the {cw} values")]
            } else {
                vec![format!("list the {cw} of every {tw}"), format!("what is the {cw} of each {tw}")]
            };
            (phrasings, format!("SELECT {cn} FROM {t}"))
        }
        TemplateKind::Count => (
            vec![format!("how many {tw} are there"), format!("count the number of {tw}")],
            format!("SELECT count(*) FROM {t}"),
        ),
        TemplateKind::WhereText | TemplateKind::WhereValue => {
            let c2 = *pick(rng, &tab.text);
            let others: Vec<usize> = tab.text.iter().chain(&tab.number).copied().filter(|&c| c != c2).collect();
            let c1 = *pick(rng, &others);
            let v = pick(rng, &g.values[&c2]).clone();
            let (c1w, c1n, c2w, c2n) = (words_of(s, c1), col_name(s, c1), words_of(s, c2), col_name(s, c2));
            let sql = format!("SELECT {c1n} FROM {t} WHERE {c2n} = '{v}'");
            if kind == TemplateKind::WhereValue {
                tags.push("value".into());
                (
                    vec![format!("show the {c1w} for {v}"), format!("what {c1w} goes with {v}")],
                    sql,
                )
            } else {
                (
                    vec![format!("show the {c1w} whose {c2w} is {v}"), format!("which {c1w} has {c2w} {v}")],
                    sql,
                )
            }
        }
        TemplateKind::Superlative => {
            let c2 = *pick(rng, &tab.number);
            let c1 = *pick(rng, &tab.text);
            let (c1w, c1n, c2w, c2n) = (words_of(s, c1), col_name(s, c1), words_of(s, c2), col_name(s, c2));
            let (word, dir) = if rng.random_bool(0.5) { ("largest", "DESC") } else { ("smallest", "ASC") };
            (
                vec![
                    format!("which {c1w} has the {word} {c2w}"),
                    format!("give the {c1w} with the {word} {c2w}"),
                ],
                format!("SELECT {c1n} FROM {t} ORDER BY {c2n} {dir} LIMIT 1"),
            )
        }
        TemplateKind::Aggregate => {
            let c = *pick(rng, &tab.number);
            let (cw, cn) = (words_of(s, c), col_name(s, c));
            let (word, f) = *pick(rng, &[("average", "avg"), ("maximum", "max"), ("minimum", "min"), ("total", "sum")]);
            (
                vec![format!("what is the {word} {cw}"), format!("compute the {word} of {cw}")],
                format!("SELECT {f}({cn}) FROM {t}"),
            )
        }
        TemplateKind::Compare => {
            let c2 = *pick(rng, &tab.number);
            let c1 = *pick(rng, &tab.text);
            let n = rng.random_range(10..90);
            let (c1w, c1n, c2w, c2n) = (words_of(s, c1), col_name(s, c1), words_of(s, c2), col_name(s, c2));
            let (word, op) = if rng.random_bool(0.5) { ("above", ">") } else { ("below", "<") };
            (
                vec![
                    format!("show the {c1w} with {c2w} {word} {n}"),
                    format!("list every {c1w} whose {c2w} is {word} {n}"),
                ],
                format!("SELECT {c1n} FROM {t} WHERE {c2n} {op} {n}"),
            )
        }
        TemplateKind::Group => {
            let c = *pick(rng, &tab.text);
            let (cw, cn) = (words_of(s, c), col_name(s, c));
            let phrasings = if implicit {
                vec![format!("show each {cw} and how often it occurs"), format!("count the rows for each {cw}")]
            } else {
                vec![
                    format!("show each {cw} and the number of {tw}"),
                    format!("count the {tw} for each {cw}"),
                ]
            };
            (phrasings, format!("SELECT {cn}, count(*) FROM {t} GROUP BY {cn}"))
        }
        TemplateKind::Join | TemplateKind::JoinCount => {
            let &(child, parent, fk) = pick(rng, &g.links);
            let (a, b) = if rng.random_bool(0.5) { (child, parent) } else { (parent, child) };
            let (ta, tb) = (&g.tables[a], &g.tables[b]);
            let on = if a == child {
                format!("T1.{} = T2.id", col_name(s, fk))
            } else {
                format!("T1.id = T2.{}", col_name(s, fk))
            };
            let c2 = *pick(rng, &tb.text);
            let v = pick(rng, &g.values[&c2]).clone();
            let (c2w, c2n) = (words_of(s, c2), col_name(s, c2));
            let from = format!("{} AS T1 JOIN {} AS T2 ON {on}", ta.name, tb.name);
            tags.push("join".into());
            if kind == TemplateKind::Join {
                let c1 = any_col(rng, ta);
                let (c1w, c1n) = (words_of(s, c1), col_name(s, c1));
                (
                    vec![format!("show the {c1w} whose {c2w} is {v}"), format!("which {c1w} has {c2w} {v}")],
                    format!("SELECT T1.{c1n} FROM {from} WHERE T2.{c2n} = '{v}'"),
                )
            } else {
                let aw = s.tables[a].words.join(" ");
                (
                    vec![format!("how many {aw} have {c2w} {v}"), format!("count the {aw} with {c2w} {v}")],
                    format!("SELECT count(*) FROM {from} WHERE T2.{c2n} = '{v}'"),
                )
            }
        }
    };
    Generated { phrasings, sql, tags }
}

fn gen_split(
    spec: &SyntheticSpec,
    schemas: &[GenSchema],
    n: usize,
    paraphrase: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<RawExample> {
    let n_value = spec.value_count(n);
    let mut slots: Vec<bool> = (0..n).map(|i| i < n_value).collect();
    slots.shuffle(rng);
    let mut out = Vec::with_capacity(n);
    for (i, &needs_value) in slots.iter().enumerate() {
        let g = &schemas[i % schemas.len()];
        let kind = if needs_value {
            TemplateKind::WhereValue
        } else {
            let allowed: Vec<TemplateKind> = spec
                .templates
                .iter()
                .copied()
                .filter(|k| *k != TemplateKind::WhereValue && (!k.needs_join() || !g.links.is_empty()))
                .collect();
            if allowed.is_empty() {
                TemplateKind::Select
            } else {
                *pick(rng, &allowed)
            }
        };
        let ex = gen_example(g, kind, spec.implicit_tables, rng);
        let chosen: Vec<String> = if paraphrase {
            ex.phrasings.clone()
        } else {
            vec![pick(rng, &ex.phrasings).clone()]
        };
        for q in chosen {
            out.push(RawExample {
                db_id: g.schema.db_id.clone(),
                question: q,
                query: ex.sql.clone(),
                tags: ex.tags.clone(),
            });
        }
    }
    out
}

/// Generates schemas, rows and example splits, deterministically from `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = derive_rng(spec.seed, "synthetic", 0);
    let mut rows = BTreeMap::new();
    let mut make = |prefix: &str, count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<GenSchema>> {
        (0..count)
            .map(|i| {
                let (g, r) = gen_schema(spec, rng, &format!("{prefix}_{i}"))?;
                rows.insert(g.schema.db_id.clone(), r);
                Ok(g)
            })
            .collect()
    };
    let train_schemas = make("synth", spec.num_schemas, &mut rng)?;
    let dev_only = make("synth_dev", spec.dev_schemas, &mut rng)?;
    let train = gen_split(spec, &train_schemas, spec.num_examples, false, &mut rng);
    let dev_pool = if dev_only.is_empty() { &train_schemas } else { &dev_only };
    let dev = gen_split(spec, dev_pool, spec.dev_examples, spec.paraphrase_dev, &mut rng);
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        train_schemas: train_schemas.into_iter().map(|g| g.schema).collect(),
        dev_schemas: dev_only.into_iter().map(|g| g.schema).collect(),
        rows,
        train,
        dev,
    })
}
