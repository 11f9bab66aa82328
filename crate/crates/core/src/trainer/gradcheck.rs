use std::sync::Arc;

use rand::Rng;

use super::config::TrainConfig;
use super::model::{Model, Prepared};
use crate::dataset_io::{Example, RawExample};
use crate::error::Result;
use crate::numerics::{check_gradients, derive_rng, GradCheckReport, Gradients, Graph, ParamId, ParamStore, Tensor};
use crate::rat_encoder::{encode, rat_layer, EncoderConfig, RatLayerParams, Vocab};
use crate::schema_graph::{ColumnType, Schema, TokenizerConfig};
use crate::schema_linker::LinkerConfig;
use crate::tree_decoder::DecoderConfig;

/// Tiny configuration used for finite-difference checks.
pub fn gradcheck_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.encoder = EncoderConfig {
        d_x: 8,
        heads: 2,
        layers: 1,
        ff: 12,
        word_dim: 6,
        lstm_hidden: 4,
        ..EncoderConfig::desk()
    };
    cfg.decoder = DecoderConfig {
        rule_dim: 6,
        node_dim: 4,
        hidden: 10,
        heads: 2,
        ..DecoderConfig::desk()
    };
    cfg.align_weight = 1.0;
    cfg.seed = seed;
    cfg
}

/// Six-node instance: one table, two columns, three question tokens.
fn instance(seed: u64) -> Result<(Model, Prepared)> {
    let schema = Schema::build(
        "pets",
        &["pet"],
        &[(0, "name", ColumnType::Text, false), (0, "age", ColumnType::Number, false)],
        &[],
        TokenizerConfig::default(),
    )?;
    let raw = RawExample {
        db_id: "pets".into(),
        question: "old pet names".into(),
        query: "SELECT name FROM pet WHERE age > 3".into(),
        tags: vec![],
    };
    let ex = Example::from_raw(&raw, &schema, None, TokenizerConfig::default(), LinkerConfig::default())?;
    let mut words = ex.question.tokens.clone();
    for c in &schema.columns {
        words.extend(c.label());
    }
    words.extend(schema.tables[0].words.iter().cloned());
    let vocab = Vocab::build(words.iter().map(String::as_str), 1);
    let model = Model::new(&gradcheck_config(seed), vocab)?;
    let prepared = model.prepare(&schema, &ex)?;
    Ok((model, prepared))
}

fn random_weights(seed: u64, label: &str, n: usize) -> Vec<f64> {
    let mut rng = derive_rng(seed, label, 0);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// One relation-aware layer under a random linear read-out.
fn check_layer(seed: u64, p: &Prepared) -> Result<GradCheckReport> {
    let n = p.input.relations.n();
    let (d, heads) = (8, 2);
    let index = Arc::clone(&p.input.self_index);
    let mut rng = derive_rng(seed, "gradcheck.layer", 0);
    let mut store = ParamStore::new();
    let lp = RatLayerParams::new(&mut store, "layer", d, 12, &mut rng)?;
    let rows = index.max_id().map_or(1, |m| m as usize + 1);
    let rk = store.add("rel_k", Tensor::matrix(rows, d / heads, random_weights(seed, "rk", rows * d / heads))?)?;
    let rv = store.add("rel_v", Tensor::matrix(rows, d / heads, random_weights(seed, "rv", rows * d / heads))?)?;
    let x = random_weights(seed, "x", n * d);
    let w = random_weights(seed, "w", n * d);
    let run = |store: &ParamStore| -> Result<(f64, Gradients)> {
        let mut g = Graph::new(store, false, derive_rng(seed, "graph", 0));
        let xv = g.constant(n, d, x.clone())?;
        let (kv, vv) = (g.param(rk), g.param(rv));
        let (y, _) = rat_layer(&mut g, xv, &lp, kv, vv, &index, heads, 0.0)?;
        let wv = g.constant(n, d, w.clone())?;
        let prod = g.mul(y, wv)?;
        let s = g.sum(prod);
        Ok((g.scalar(s), g.backward(s)?))
    };
    let (_, grads) = run(&store)?;
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    check_gradients("rat_layer", &mut store, &ids, &grads, |s| run(s).map(|r| r.0))
}

/// Encoder and alignment matrices under a random read-out plus `log L`.
fn check_encoder(seed: u64, model: &mut Model, p: &Prepared) -> Result<GradCheckReport> {
    let n = p.input.relations.n();
    let d = model.config.encoder.d_x;
    let w = random_weights(seed, "w_enc", n * d);
    let enc = model.encoder.clone();
    let run = |store: &ParamStore| -> Result<(f64, Gradients)> {
        let mut g = Graph::new(store, false, derive_rng(seed, "graph", 0));
        let st = encode(&mut g, &enc, &p.input)?;
        let wv = g.constant(n, d, w.clone())?;
        let prod = g.mul(st.all, wv)?;
        let a = g.sum(prod);
        let lc = g.log(st.l_col);
        let lc = g.mean(lc);
        let lt = g.log(st.l_tab);
        let lt = g.mean(lt);
        let s = g.add_n(&[a, lc, lt])?;
        Ok((g.scalar(s), g.backward(s)?))
    };
    let (_, grads) = run(&model.store)?;
    let ids: Vec<ParamId> = model
        .store
        .iter()
        .filter(|(_, p)| p.name.starts_with("enc."))
        .map(|(id, _)| id)
        .collect();
    check_gradients("encoder+alignment", &mut model.store, &ids, &grads, |s| run(s).map(|r| r.0))
}

/// Full teacher-forced loss with the alignment term.
fn check_full(model: &mut Model, p: &Prepared) -> Result<GradCheckReport> {
    let frozen = model.clone();
    let run = |store: &ParamStore| -> Result<(f64, Gradients)> {
        let mut g = Graph::new(store, false, derive_rng(0, "graph", 0));
        let loss = frozen.loss(&mut g, p)?;
        Ok((g.scalar(loss.total), g.backward(loss.total)?))
    };
    let (_, grads) = run(&model.store)?;
    let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
    check_gradients("teacher_forced+align", &mut model.store, &ids, &grads, |s| run(s).map(|r| r.0))
}

/// Finite-difference checks of one relation-aware layer, the encoder with
/// alignment, and the full training loss on a six-node instance.
pub fn run_gradchecks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let (mut model, p) = instance(seed)?;
    Ok(vec![
        check_layer(seed, &p)?,
        check_encoder(seed, &mut model, &p)?,
        check_full(&mut model, &p)?,
    ])
}
