use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ratsql::dataset_io::{Example, RawExample};
use ratsql::fixtures;
use ratsql::numerics::*;
use ratsql::rat_encoder::*;
use ratsql::schema_graph::{Schema, TokenizerConfig};
use ratsql::schema_linker::{build_value_index, LinkerConfig};
use ratsql::sql_grammar::{exact_match, parse_sql, Action, Grammar, Terminal};
use ratsql::tree_decoder::*;
use ratsql::Error;

const QUERIES: [&str; 6] = [
    fixtures::CAR_SQL,
    "SELECT count(*) FROM cars_data",
    "SELECT T1.maker, count(*) FROM model_list AS T1 JOIN car_names AS T2 \
     ON T1.model_id = T2.model_id GROUP BY T1.maker HAVING count(*) > 1",
    "SELECT model FROM car_names WHERE make_id IN (SELECT id FROM cars_data WHERE mpg > 20)",
    "SELECT avg(mpg) FROM cars_data WHERE (cylinders = 4 OR cylinders = 8) AND year < 1980",
    "SELECT maker FROM model_list EXCEPT SELECT maker FROM model_list WHERE maker LIKE '%a%'",
];

fn grammar() -> &'static Grammar {
    Grammar::shipped()
}

struct Fixture {
    schema: Schema,
    ex: Example,
    input: EncoderInput,
    store: ParamStore,
    enc: EncoderParams,
    dec: DecoderParams,
}

fn example(schema: &Schema, query: &str) -> Example {
    let values = build_value_index("car_1", &fixtures::car_rows(), TokenizerConfig::default());
    let raw = RawExample {
        db_id: "car_1".into(),
        question: fixtures::CAR_QUESTION.into(),
        query: query.into(),
        tags: vec![],
    };
    Example::from_raw(&raw, schema, Some(&values), TokenizerConfig::default(), LinkerConfig::default()).unwrap()
}

/// Small randomly initialised model over the car fixture.
fn fixture(seed: u64, query: &str, step_limit: usize) -> Fixture {
    let schema = fixtures::car_schema();
    let ex = example(&schema, query);
    let mut words = ex.question.tokens.clone();
    for c in &schema.columns {
        words.extend(c.label());
    }
    for t in &schema.tables {
        words.extend(t.words.iter().cloned());
    }
    let vocab = Vocab::build(words.iter().map(String::as_str), 1);
    let ecfg = EncoderConfig {
        d_x: 8,
        heads: 2,
        layers: 1,
        ff: 12,
        word_dim: 6,
        lstm_hidden: 4,
        ..EncoderConfig::desk()
    };
    let dcfg = DecoderConfig {
        rule_dim: 6,
        node_dim: 4,
        hidden: 10,
        heads: 2,
        step_limit,
        ..DecoderConfig::desk()
    };
    let mut rng = derive_rng(seed, "init", 0);
    let mut store = ParamStore::new();
    let enc = EncoderParams::new(&mut store, ecfg, vocab.len(), &mut rng).unwrap();
    let dec = DecoderParams::new(&mut store, dcfg, ecfg.d_x, grammar(), &mut rng).unwrap();
    // Random weights on their own mostly recurse until the step limit; a bias
    // towards short productions keeps most trees finite.
    let (cost, _) = grammar().min_completion();
    let bias: Vec<f64> = grammar()
        .productions()
        .iter()
        .map(|p| -0.5 * p.children.iter().map(|k| cost[k.0] as f64).sum::<f64>() + rng.random_range(-1.0..1.0))
        .collect();
    store.get_mut(dec.rule_b2).data_mut().copy_from_slice(&bias);
    let input = EncoderInput::new(&schema, &ex.question, ex.relations.clone(), &vocab, &ecfg).unwrap();
    Fixture {
        schema,
        ex,
        input,
        store,
        enc,
        dec,
    }
}

impl Fixture {
    fn decode(&self, mode: SearchMode, oracle: Oracle) -> ratsql::Result<Decoded> {
        let mut g = Graph::eval(&self.store);
        let state = encode(&mut g, &self.enc, &self.input)?;
        let ctx = DecoderContext::new(&mut g, &self.dec, grammar(), &state)?;
        decode(&mut g, &self.dec, grammar(), &ctx, "car_1", mode, oracle, Some(&self.ex.ast))
    }
}

#[test]
fn single_production_kinds_have_probability_one() {
    let f = fixture(0, fixtures::CAR_SQL, 200);
    let mut g = Graph::eval(&f.store);
    let state = encode(&mut g, &f.enc, &f.input).unwrap();
    let ctx = DecoderContext::new(&mut g, &f.dec, grammar(), &state).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let singles: Vec<_> = grammar()
        .kinds()
        .iter()
        .enumerate()
        .filter(|(_, k)| k.terminal.is_none() && k.productions.len() == 1)
        .collect();
    assert!(!singles.is_empty());
    for (i, k) in singles {
        let h = g.constant(1, 10, (0..10).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let lp = action_log_probs(&mut g, &f.dec, grammar(), &ctx, h, ratsql::sql_grammar::KindId(i)).unwrap();
        let only = k.productions[0].0;
        for (j, &v) in g.value(lp).iter().enumerate() {
            if j == only {
                assert_eq!(v, 0.0);
            } else {
                assert_eq!(v, f64::NEG_INFINITY);
            }
        }
    }
}

#[test]
fn one_hot_pointer_selects_the_aligned_column() {
    let mut g = Graph::standalone(false, derive_rng(0, "t", 0));
    let (m, c) = (4, 5);
    let mut lambda = vec![0.0; m];
    lambda[2] = 1.0;
    let mut l = vec![0.0; m * c];
    for j in 0..m {
        l[j * c + (j + 1) % c] = 1.0;
    }
    let lv = g.constant(1, m, lambda).unwrap();
    let mv = g.constant(m, c, l).unwrap();
    let pr = g.mix(lv, mv).unwrap();
    assert_eq!(g.value(pr), &[0.0, 0.0, 0.0, 1.0, 0.0]);
}

fn naive_pointer(lambda: &[f64], l: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for i in 0..c {
        for (j, lam) in lambda.iter().enumerate() {
            out[i] += lam * l[j * c + i];
        }
    }
    out
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[test]
fn pointer_matches_naive_double_sum() {
    for seed in 0..10 {
        let f = fixture(seed, fixtures::CAR_SQL, 200);
        let mut g = Graph::eval(&f.store);
        let state = encode(&mut g, &f.enc, &f.input).unwrap();
        let ctx = DecoderContext::new(&mut g, &f.dec, grammar(), &state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hv = g.constant(1, 10, h.clone()).unwrap();
        let d = 8;
        let memory = g.value(state.memory).to_vec();
        let nq = memory.len() / d;
        for (t, wq, wk, l, c) in [
            (Terminal::Column, f.dec.col_q, f.dec.col_k, state.l_col, 12),
            (Terminal::Table, f.dec.tab_q, f.dec.tab_k, state.l_tab, 3),
        ] {
            let pv = pointer_probs(&mut g, &f.dec, &ctx, hv, t).unwrap();
            let got = g.value(pv).to_vec();
            let wq = f.store.get(wq).data();
            let wk = f.store.get(wk).data();
            let q: Vec<f64> = (0..d).map(|a| (0..10).map(|b| h[b] * wq[b * d + a]).sum()).collect();
            let scores: Vec<f64> = (0..nq)
                .map(|j| {
                    let key: Vec<f64> = (0..d).map(|a| (0..d).map(|b| memory[j * d + b] * wk[b * d + a]).sum()).collect();
                    q.iter().zip(&key).map(|(x, y)| x * y).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let lv = g.value(l).to_vec();
            let want = naive_pointer(&softmax(&scores), &lv, c);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_distributions_are_normalised() {
    let f = fixture(4, fixtures::CAR_SQL, 200);
    let mut g = Graph::eval(&f.store);
    let state = encode(&mut g, &f.enc, &f.input).unwrap();
    let ctx = DecoderContext::new(&mut g, &f.dec, grammar(), &state).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (i, _) in grammar().kinds().iter().enumerate() {
        let kind = ratsql::sql_grammar::KindId(i);
        let h = g.constant(1, 10, (0..10).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let lp = action_log_probs(&mut g, &f.dec, grammar(), &ctx, h, kind).unwrap();
        let cands = ctx.candidates(grammar(), kind);
        let values = g.value(lp);
        let mass: f64 = cands.iter().map(|&a| values[action_position(a)].exp()).sum();
        assert!((mass - 1.0).abs() < 1e-6, "kind {i}: {mass}");
        if grammar().kind(kind).terminal.is_none() {
            let legal: Vec<usize> = cands.iter().map(|&a| action_position(a)).collect();
            for (j, &v) in values.iter().enumerate() {
                if !legal.contains(&j) {
                    assert_eq!(v.exp(), 0.0);
                }
            }
        }
    }
}

#[test]
fn random_models_decode_legal_trees() {
    let mut ok = 0;
    let mut limited = 0;
    for seed in 0..1000 {
        let f = fixture(seed, fixtures::CAR_SQL, 200);
        match f.decode(SearchMode::Greedy, Oracle::None) {
            Ok(d) => {
                d.ast.validate(grammar(), 12, 3).unwrap();
                ok += 1;
            }
            Err(Error::StepLimit { limit, emitted }) => {
                assert_eq!((limit, emitted), (200, 200));
                limited += 1;
            }
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert_eq!(ok + limited, 1000);
    assert!(ok > 500, "only {ok} decodes finished");
}

#[test]
fn beam_of_one_is_greedy_and_wider_beams_dominate() {
    let mut compared = 0;
    for seed in 0..100 {
        let f = fixture(seed, QUERIES[seed as usize % QUERIES.len()], 200);
        let Ok(greedy) = f.decode(SearchMode::Greedy, Oracle::None) else {
            continue;
        };
        let one = f.decode(SearchMode::Beam(1), Oracle::None).unwrap();
        assert_eq!(one.actions, greedy.actions);
        assert_eq!(one.log_prob, greedy.log_prob);
        let four = f.decode(SearchMode::Beam(4), Oracle::None).unwrap();
        assert!(four.log_prob >= greedy.log_prob, "seed {seed}: {} < {}", four.log_prob, greedy.log_prob);
        compared += 1;
    }
    assert!(compared > 50);
}

#[test]
fn beam_of_zero_is_rejected() {
    let f = fixture(0, fixtures::CAR_SQL, 200);
    assert!(matches!(f.decode(SearchMode::Beam(0), Oracle::None), Err(Error::Config(_))));
}

#[test]
fn both_oracles_reproduce_gold() {
    for (i, q) in QUERIES.iter().enumerate() {
        for seed in 0..5 {
            let f = fixture(seed + 10 * i as u64, q, 200);
            for mode in [SearchMode::Greedy, SearchMode::Beam(3)] {
                let d = f.decode(mode, Oracle::Both).unwrap();
                assert!(exact_match(grammar(), &d.ast, &f.ex.ast).unwrap(), "{q}");
                assert_eq!(d.actions, f.ex.actions);
            }
        }
    }
}

#[test]
fn single_oracles_force_their_choices() {
    for (i, q) in QUERIES.iter().enumerate() {
        let f = fixture(i as u64, q, 200);
        let gold_terms: Vec<Action> =
            f.ex.actions.iter().copied().filter(|a| !matches!(a, Action::ApplyRule(_))).collect();
        let sketch = f.decode(SearchMode::Greedy, Oracle::Sketch).unwrap();
        let rules = |acts: &[Action]| -> Vec<Action> {
            acts.iter().copied().filter(|a| matches!(a, Action::ApplyRule(_))).collect()
        };
        assert_eq!(rules(&sketch.actions), rules(&f.ex.actions));
        assert_eq!(sketch.actions.len(), f.ex.actions.len());
        if let Ok(cols) = f.decode(SearchMode::Greedy, Oracle::Columns) {
            // wherever the structure agrees the terminals are the gold ones
            if rules(&cols.actions) == rules(&f.ex.actions) {
                let got: Vec<Action> =
                    cols.actions.iter().copied().filter(|a| !matches!(a, Action::ApplyRule(_))).collect();
                assert_eq!(got, gold_terms);
            }
        }
    }
    let f = fixture(0, fixtures::CAR_SQL, 200);
    let mut g = Graph::eval(&f.store);
    let state = encode(&mut g, &f.enc, &f.input).unwrap();
    let ctx = DecoderContext::new(&mut g, &f.dec, grammar(), &state).unwrap();
    let r = decode(&mut g, &f.dec, grammar(), &ctx, "car_1", SearchMode::Greedy, Oracle::Sketch, None);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn teacher_forced_probability_matches_stepwise_product() {
    for (i, q) in QUERIES.iter().enumerate() {
        let f = fixture(i as u64 + 3, q, 200);
        let mut g = Graph::eval(&f.store);
        let state = encode(&mut g, &f.enc, &f.input).unwrap();
        let ctx = DecoderContext::new(&mut g, &f.dec, grammar(), &state).unwrap();
        let tf = teacher_forced_nll(&mut g, &f.dec, grammar(), &ctx, &f.ex.actions).unwrap();
        let nll = g.scalar(tf.loss);
        assert!(nll >= 0.0);
        assert_eq!(tf.steps, f.ex.actions.len());

        // independent replay through the public step API
        let mut s = DecoderState::new(&mut g, &f.dec, grammar(), None);
        let mut prob = 1.0;
        for &a in &f.ex.actions {
            let (cell, dist) = next_distribution(&mut g, &f.dec, grammar(), &ctx, &s).unwrap();
            let lp = g.value(dist)[action_position(a)];
            prob *= lp.exp();
            s.advance(&mut g, &f.dec, grammar(), &ctx, cell, a, lp).unwrap();
        }
        assert!(s.is_done());
        assert!(((-nll).exp() - prob).abs() < 1e-6, "{q}: {} vs {prob}", (-nll).exp());
        assert!((s.log_prob() + nll).abs() < 1e-9);
    }
}

#[test]
fn teacher_forcing_rejects_bad_sequences() {
    let f = fixture(0, fixtures::CAR_SQL, 200);
    let mut g = Graph::eval(&f.store);
    let state = encode(&mut g, &f.enc, &f.input).unwrap();
    let ctx = DecoderContext::new(&mut g, &f.dec, grammar(), &state).unwrap();
    let acts = &f.ex.actions;
    let truncated = &acts[..acts.len() - 1];
    assert!(matches!(
        teacher_forced_nll(&mut g, &f.dec, grammar(), &ctx, truncated),
        Err(Error::Decode(_))
    ));
    let mut extended = acts.clone();
    extended.push(acts[0]);
    assert!(matches!(
        teacher_forced_nll(&mut g, &f.dec, grammar(), &ctx, &extended),
        Err(Error::Decode(_))
    ));
    let mut illegal = acts.clone();
    illegal[0] = Action::SelectColumn(0);
    assert!(matches!(
        teacher_forced_nll(&mut g, &f.dec, grammar(), &ctx, &illegal),
        Err(Error::Decode(_))
    ));
}

#[test]
fn step_limit_stops_decoding() {
    let f = fixture(0, fixtures::CAR_SQL, 5);
    match f.decode(SearchMode::Greedy, Oracle::None) {
        Err(Error::StepLimit { limit, emitted }) => assert_eq!((limit, emitted), (5, 5)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(f.decode(SearchMode::Beam(3), Oracle::None), Err(Error::StepLimit { .. })));
}

#[test]
fn greedy_trace_lists_ranked_alternatives() {
    let f = fixture(2, fixtures::CAR_SQL, 200);
    let d = f.decode(SearchMode::Greedy, Oracle::Both).unwrap();
    assert_eq!(d.trace.len(), d.actions.len());
    for (i, s) in d.trace.iter().enumerate() {
        assert_eq!(s.step, i);
        assert!(s.forced);
        assert!(!s.top.is_empty() && s.top.len() <= 5);
        assert!(s.top.windows(2).all(|w| w[0].prob >= w[1].prob));
        assert_eq!(s.chosen, action_name(grammar(), d.actions[i]));
    }
    let json = d.trace_json();
    let first = &json.as_array().unwrap()[0];
    for key in ["step", "node", "chosen", "prob", "forced", "top"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    let _ = &f.schema;
}

#[test]
fn width_mismatch_is_an_error() {
    let f = fixture(0, fixtures::CAR_SQL, 200);
    let mut store = ParamStore::new();
    let mut rng = derive_rng(0, "x", 0);
    let wide = DecoderParams::new(&mut store, f.dec.cfg, 16, grammar(), &mut rng).unwrap();
    let mut g = Graph::eval(&f.store);
    let state = encode(&mut g, &f.enc, &f.input).unwrap();
    assert!(matches!(
        DecoderContext::new(&mut g, &wide, grammar(), &state),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn parsed_queries_exist_for_fixture() {
    let s = fixtures::car_schema();
    for q in QUERIES {
        parse_sql(q, &s).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pointer_mix_equals_double_sum(m in 1usize..6, c in 1usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lam = softmax(&(0..m).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        let mut l = Vec::new();
        for _ in 0..m {
            l.extend(softmax(&(0..c).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>()));
        }
        let mut g = Graph::standalone(false, derive_rng(0, "t", 0));
        let lv = g.constant(1, m, lam.clone()).unwrap();
        let mv = g.constant(m, c, l.clone()).unwrap();
        let pr = g.mix(lv, mv).unwrap();
        let want = naive_pointer(&lam, &l, c);
        for (a, b) in g.value(pr).iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
