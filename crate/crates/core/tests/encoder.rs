mod common;

use common::layer::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratsql::dataset_io::{Example, RawExample};
use ratsql::fixtures;
use ratsql::numerics::*;
use ratsql::rat_encoder::*;
use ratsql::schema_graph::{RelationMode, TokenizerConfig};
use ratsql::schema_linker::{build_value_index, LinkerConfig};

#[test]
fn no_relations_reduces_to_plain_self_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let d = heads * rng.random_range(1..5);
        let n = rng.random_range(1..8);
        let ff = rng.random_range(1..12);
        let l = random_layer(&mut rng, d, ff, 3, d / heads);
        let x = rand_vec(&mut rng, n * d);
        let (got, _) = run_layer(&l, &x, n, &empty_index(n, d / heads), heads);
        let want = naive_layer(&l, &x, n, None, heads);
        worst = worst.max(max_diff(&got, &want));
    }
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn single_node_attends_to_itself() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let l = random_layer(&mut rng, 8, 6, 9, 4);
    let x = rand_vec(&mut rng, 8);
    let index = random_index(&mut rng, 1, 4, 9);
    let (_, alphas) = run_layer(&l, &x, 1, &index, 2);
    for a in alphas {
        assert_eq!(a, vec![1.0]);
    }
}

#[test]
fn relation_terms_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let heads = [1, 2, 4][rng.random_range(0..3)];
        let dh = rng.random_range(3..6);
        let d = heads * dh;
        let n = rng.random_range(1..7);
        let l = random_layer(&mut rng, d, 10, 9, dh);
        let x = rand_vec(&mut rng, n * d);
        let index = random_index(&mut rng, n, dh, 9);
        let (got, _) = run_layer(&l, &x, n, &index, heads);
        let want = naive_layer(&l, &x, n, Some(&index), heads);
        let diff = max_diff(&got, &want);
        assert!(diff < 1e-9, "deviation {diff}");
    }
}

fn car_example() -> (ratsql::schema_graph::Schema, Example) {
    let schema = fixtures::car_schema();
    let values = build_value_index("car_1", &fixtures::car_rows(), TokenizerConfig::default());
    let raw = RawExample {
        db_id: "car_1".into(),
        question: fixtures::CAR_QUESTION.into(),
        query: fixtures::CAR_SQL.into(),
        tags: vec![],
    };
    let ex = Example::from_raw(&raw, &schema, Some(&values), TokenizerConfig::default(), LinkerConfig::default()).unwrap();
    (schema, ex)
}

#[test]
fn permuting_schema_nodes_permutes_the_output() {
    let (_, ex) = car_example();
    let rel = &ex.relations;
    let (nc, nt, n) = (rel.num_columns, rel.num_tables, rel.n());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mode = RelationMode::Concat;
    let (heads, dh) = (2, 6);
    let d = heads * dh;
    let l = random_layer(&mut rng, d, 16, mode.table_rows(), dh);
    let x = rand_vec(&mut rng, n * d);

    let mut col_perm: Vec<usize> = (0..nc).collect();
    let mut tab_perm: Vec<usize> = (0..nt).collect();
    for i in (1..nc).rev() {
        col_perm.swap(i, rng.random_range(0..=i));
    }
    for i in (1..nt).rev() {
        tab_perm.swap(i, rng.random_range(0..=i));
    }
    let old = |i: usize| {
        if i < nc {
            col_perm[i]
        } else if i < nc + nt {
            nc + tab_perm[i - nc]
        } else {
            i
        }
    };
    let mut xp = vec![0.0; n * d];
    for i in 0..n {
        xp[i * d..(i + 1) * d].copy_from_slice(&x[old(i) * d..(old(i) + 1) * d]);
    }

    let (y, _) = run_layer(&l, &x, n, &rel.pair_index(mode, dh).unwrap(), heads);
    let permuted = rel.permuted(&col_perm, &tab_perm);
    let (yp, _) = run_layer(&l, &xp, n, &permuted.pair_index(mode, dh).unwrap(), heads);
    for i in 0..n {
        let diff = max_diff(&yp[i * d..(i + 1) * d], &y[old(i) * d..(old(i) + 1) * d]);
        assert!(diff < 1e-10, "node {i}: {diff}");
    }
}

fn car_encoder(seed: u64) -> (ParamStore, EncoderParams, EncoderInput) {
    let (schema, ex) = car_example();
    let mut words: Vec<String> = ex.question.tokens.clone();
    for c in &schema.columns {
        words.extend(c.label());
    }
    for t in &schema.tables {
        words.extend(t.words.iter().cloned());
    }
    let vocab = Vocab::build(words.iter().map(String::as_str), 1);
    let cfg = EncoderConfig {
        d_x: 16,
        heads: 4,
        layers: 2,
        ff: 24,
        word_dim: 8,
        lstm_hidden: 8,
        ..EncoderConfig::desk()
    };
    let mut rng = derive_rng(seed, "init", 0);
    let mut store = ParamStore::new();
    let p = EncoderParams::new(&mut store, cfg, vocab.len(), &mut rng).unwrap();
    let input = EncoderInput::new(&schema, &ex.question, ex.relations.clone(), &vocab, &cfg).unwrap();
    (store, p, input)
}

#[test]
fn alignment_rows_are_distributions() {
    for seed in 0..5 {
        let (store, p, input) = car_encoder(seed);
        let mut g = Graph::eval(&store);
        let enc = encode(&mut g, &p, &input).unwrap();
        for (l, cols) in [(enc.l_col, input.num_columns), (enc.l_tab, input.num_tables)] {
            assert_eq!(g.shape(l), (input.num_question(), cols));
            for r in 0..input.num_question() {
                let row = g.row(l, r);
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (heads, dh, n) = (2, 4, 4);
    let d = heads * dh;
    let mut l = random_layer(&mut rng, d, 6, 5, dh);
    let x = rand_vec(&mut rng, n * d);
    let weights = rand_vec(&mut rng, n * d);
    let index = random_index(&mut rng, n, dh, 5);
    let loss_of = |store: &ParamStore, p: &RatLayerParams, rk: ParamId, rv: ParamId| -> (f64, Gradients) {
        let mut g = Graph::new(store, false, derive_rng(0, "g", 0));
        let xv = g.constant(n, d, x.clone()).unwrap();
        let (rkv, rvv) = (g.param(rk), g.param(rv));
        let (y, _) = rat_layer(&mut g, xv, p, rkv, rvv, &index, heads, 0.0).unwrap();
        let w = g.constant(n, d, weights.clone()).unwrap();
        let prod = g.mul(y, w).unwrap();
        let s = g.sum(prod);
        let value = g.scalar(s);
        (value, g.backward(s).unwrap())
    };
    let (p, rk, rv) = (l.p, l.rel_k, l.rel_v);
    let (_, grads) = loss_of(&l.store, &p, rk, rv);
    let ids: Vec<ParamId> = l.store.iter().map(|(id, _)| id).collect();
    let report = check_gradients("rat_layer", &mut l.store, &ids, &grads, |s| Ok(loss_of(s, &p, rk, rv).0)).unwrap();
    assert!(report.passed(1e-5), "{report:?}");
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let (mut store, p, input) = car_encoder(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = input.relations.n();
    let weights = rand_vec(&mut rng, n * p.cfg.d_x);
    let loss_of = |store: &ParamStore| -> (f64, Gradients) {
        let mut g = Graph::new(store, false, derive_rng(0, "g", 0));
        let enc = encode(&mut g, &p, &input).unwrap();
        let a = g.log(enc.l_col);
        let a = g.mean(a);
        let w = g.constant(n, p.cfg.d_x, weights.clone()).unwrap();
        let b = g.mul(enc.all, w).unwrap();
        let b = g.mean(b);
        let s = g.add(a, b).unwrap();
        let value = g.scalar(s);
        (value, g.backward(s).unwrap())
    };
    let (_, grads) = loss_of(&store);
    let names = [
        "enc.align.wq_col",
        "enc.align.rel_k",
        "enc.rel_k",
        "enc.rel_v",
        "enc.layer1.wq",
        "enc.question_lstm.fwd.b",
    ];
    let ids: Vec<ParamId> = names
        .iter()
        .map(|n| store.id(n).unwrap_or_else(|| panic!("missing {n}")))
        .collect();
    let report = check_gradients("encoder", &mut store, &ids, &grads, |s| Ok(loss_of(s).0)).unwrap();
    assert!(report.passed(1e-4), "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..10_000, n in 1usize..6, heads in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dh = 3;
        let l = random_layer(&mut rng, heads * dh, 5, 4, dh);
        let x = rand_vec(&mut rng, n * heads * dh);
        let index = random_index(&mut rng, n, dh, 4);
        let (y, alphas) = run_layer(&l, &x, n, &index, heads);
        prop_assert!(y.iter().all(|v| v.is_finite()));
        for a in alphas {
            for row in a.chunks(n) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
