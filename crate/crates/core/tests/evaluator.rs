use std::collections::BTreeMap;

use proptest::prelude::*;
use ratsql::dataset_io::{generate_synthetic, Corpus, LoadOptions, SyntheticSpec};
use ratsql::evaluator::{
    consistency, evaluate, evaluate_checkpoint, oracle_sweep, score, Consistency, GroupMember, Prediction,
};
use ratsql::sql_grammar::{canonical_form, Grammar};
use ratsql::trainer::{build_vocab, grammar_hash, gradcheck_config, Checkpoint, Model, Prepared, CHECKPOINT_VERSION};
use ratsql::tree_decoder::{Oracle, SearchMode};
use ratsql::Error;

fn corpora() -> (Corpus, Corpus) {
    let spec = SyntheticSpec {
        seed: 5,
        num_examples: 30,
        dev_examples: 12,
        dev_schemas: 1,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap().to_corpora(LoadOptions::default()).unwrap()
}

fn model(train: &Corpus) -> Model {
    Model::new(&gradcheck_config(3), build_vocab(train, 1)).unwrap()
}

fn prepared() -> (Corpus, Vec<Prepared>) {
    let (train, dev) = corpora();
    let m = model(&train);
    let p = m.prepare_corpus(&dev).unwrap();
    (dev, p)
}

#[test]
fn accuracy_matches_a_hand_count() {
    let (dev, p) = prepared();
    let p = &p[..10];
    let g = Grammar::shipped();
    let right = [0, 2, 3, 7];
    let preds: Vec<Prediction> = (0..10)
        .map(|i| {
            if right.contains(&i) {
                return Prediction::of(p[i].ast.clone());
            }
            if i % 2 == 1 {
                return Prediction::failed("no decode");
            }
            // some other example's query
            let gold = canonical_form(g, &p[i].ast);
            let other = p.iter().find(|o| o.db_id == p[i].db_id && canonical_form(g, &o.ast) != gold).unwrap();
            Prediction::of(other.ast.clone())
        })
        .collect();
    let r = score(&dev, p, &preds, Oracle::None).unwrap();
    assert_eq!(r.scored, 10);
    assert_eq!(r.matched, 4);
    assert_eq!(r.failed, 3);
    assert!((r.accuracy - 0.4).abs() < 1e-15);
    let correct: Vec<usize> = r.verdicts.iter().filter(|v| v.correct).map(|v| v.index).collect();
    assert_eq!(correct, right);
    assert!(r.verdicts[1].predicted_sql.is_none());
    assert!(r.verdicts[4].predicted_sql.as_deref().unwrap().starts_with("SELECT"));
}

#[test]
fn gold_predictions_score_one() {
    let (dev, p) = prepared();
    let preds: Vec<Prediction> = p.iter().map(|x| Prediction::of(x.ast.clone())).collect();
    let r = score(&dev, &p, &preds, Oracle::None).unwrap();
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.failed, 0);
}

#[test]
fn prediction_count_must_match() {
    let (dev, p) = prepared();
    assert!(matches!(score(&dev, &p, &[], Oracle::None), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn full_oracle_on_untrained_model_is_perfect() {
    let (train, dev) = corpora();
    let m = model(&train);
    let r = evaluate(&m, &dev, SearchMode::Greedy, Oracle::Both, 2).unwrap();
    assert_eq!(r.accuracy, 1.0, "{}", r.summary());
}

#[test]
fn oracle_sweep_is_ordered_and_parallel_matches_serial() {
    let (train, dev) = corpora();
    let m = model(&train);
    let a = oracle_sweep(&m, &dev, SearchMode::Greedy, 1).unwrap();
    let b = oracle_sweep(&m, &dev, SearchMode::Greedy, 3).unwrap();
    assert_eq!(a, b);
    let acc = &a.oracle_accuracies;
    assert_eq!(acc.len(), 4);
    assert_eq!(acc["both"], 1.0);
    for name in ["sketch", "columns"] {
        assert!(acc["none"] <= acc[name] && acc[name] <= acc["both"], "{acc:?}");
    }
}

fn checkpoint(m: &Model, train: &Corpus) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        grammar_hash: grammar_hash(),
        config_hash: String::new(),
        config: m.config.clone(),
        seed: m.config.seed,
        step: 0,
        vocab: m.vocab.clone(),
        schemas: train.schemas.iter().map(|(k, s)| (k.clone(), s.fingerprint())).collect(),
        params: Checkpoint::params_of(m),
        optimizer: None,
        metrics: vec![],
        best: None,
        evals_since_best: 0,
    }
}

#[test]
fn checkpoint_evaluation_checks_versions() {
    let (train, dev) = corpora();
    let m = model(&train);
    let mut ck = checkpoint(&m, &train);
    let direct = evaluate(&m, &dev, SearchMode::Greedy, Oracle::None, 1).unwrap();
    let via = evaluate_checkpoint(&ck, &dev, SearchMode::Greedy, Oracle::None, 1).unwrap();
    assert_eq!(direct, via);

    let db = dev.examples[0].db_id.clone();
    ck.schemas.insert(db.clone(), "0000".into());
    match evaluate_checkpoint(&ck, &dev, SearchMode::Greedy, Oracle::None, 1) {
        Err(Error::VersionMismatch { checkpoint, current }) => {
            assert!(checkpoint.contains("0000"));
            assert!(current.contains(&dev.schemas[&db].fingerprint()));
        }
        other => panic!("expected a version mismatch, got {other:?}"),
    }
    let mut ck = checkpoint(&m, &train);
    ck.grammar_hash = "feed".into();
    assert!(matches!(
        evaluate_checkpoint(&ck, &dev, SearchMode::Greedy, Oracle::None, 1),
        Err(Error::VersionMismatch { .. })
    ));
}

#[test]
fn report_files_are_written() {
    let (dev, p) = prepared();
    let preds: Vec<Prediction> = p.iter().map(|x| Prediction::of(x.ast.clone())).collect();
    let r = score(&dev, &p, &preds, Oracle::None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write_dir(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    assert_eq!(csv.lines().count(), p.len() + 1);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["accuracy"], 1.0);
    assert!(r.summary().contains("exact match"));
}

fn member(key: &str, pred: Option<&str>, correct: bool) -> GroupMember {
    GroupMember {
        key: key.into(),
        predicted: pred.map(str::to_string),
        correct,
    }
}

#[test]
fn split_verdicts_break_correctness_consistency() {
    let c = consistency(&[member("a", Some("x"), true), member("a", Some("y"), false)]);
    assert_eq!(
        c,
        Consistency {
            groups: 1,
            exact_match: Some(0.0),
            correctness: Some(0.0)
        }
    );
    let c = consistency(&[member("a", Some("x"), false), member("a", Some("x"), false)]);
    assert_eq!(c.exact_match, Some(1.0));
    assert_eq!(c.correctness, Some(1.0));
}

#[test]
fn singleton_groups_leave_consistency_undefined() {
    let c = consistency(&[member("a", Some("x"), true), member("b", Some("y"), false)]);
    assert_eq!(c.groups, 0);
    assert_eq!(c.exact_match, None);
    assert_eq!(c.correctness, None);
}

#[test]
fn failed_decodes_are_never_consistent() {
    let c = consistency(&[member("a", None, false), member("a", None, false)]);
    assert_eq!(c.exact_match, Some(0.0));
    assert_eq!(c.correctness, Some(1.0));
}

/// Every pair in a group must agree.
fn pairwise(members: &[GroupMember]) -> (usize, f64, f64) {
    let mut groups: BTreeMap<&str, Vec<&GroupMember>> = BTreeMap::new();
    for m in members {
        groups.entry(&m.key).or_default().push(m);
    }
    let (mut n, mut em, mut cc) = (0, 0.0, 0.0);
    for g in groups.values().filter(|g| g.len() > 1) {
        n += 1;
        let mut same_pred = true;
        let mut same_ok = true;
        for i in 0..g.len() {
            for j in 0..g.len() {
                same_pred &= g[i].predicted.is_some() && g[i].predicted == g[j].predicted;
                same_ok &= g[i].correct == g[j].correct;
            }
        }
        em += same_pred as u8 as f64;
        cc += same_ok as u8 as f64;
    }
    (n, em / n as f64, cc / n as f64)
}

#[test]
fn five_group_fixture_matches_pairwise_comparison() {
    let ms = vec![
        member("g1", Some("p"), true),
        member("g1", Some("p"), true),
        member("g1", Some("p"), true),
        member("g2", Some("p"), true),
        member("g2", Some("q"), false),
        member("g3", Some("r"), false),
        member("g3", Some("s"), false),
        member("g4", None, false),
        member("g4", Some("t"), false),
        member("g5", Some("u"), true),
        member("g5", Some("u"), true),
        member("g5", Some("v"), false),
    ];
    let c = consistency(&ms);
    let (n, em, cc) = pairwise(&ms);
    assert_eq!(c.groups, 5);
    assert_eq!(n, 5);
    assert!((c.exact_match.unwrap() - em).abs() < 1e-15);
    assert!((c.correctness.unwrap() - cc).abs() < 1e-15);
    // g1 only for predictions; g1, g3, g4 for verdicts
    assert!((em - 0.2).abs() < 1e-15);
    assert!((cc - 0.6).abs() < 1e-15);
}

fn arb_members() -> impl Strategy<Value = Vec<GroupMember>> {
    prop::collection::vec(
        (0..5u8, prop::option::of(0..3u8), any::<bool>()).prop_map(|(k, p, c)| GroupMember {
            key: format!("k{k}"),
            predicted: p.map(|p| format!("p{p}")),
            correct: c,
        }),
        0..30,
    )
}

proptest! {
    #[test]
    fn consistency_matches_pairwise_and_ignores_order(ms in arb_members(), seed in any::<u64>()) {
        let c = consistency(&ms);
        let (n, em, cc) = pairwise(&ms);
        prop_assert_eq!(c.groups, n);
        if n > 0 {
            prop_assert!((c.exact_match.unwrap() - em).abs() < 1e-12);
            prop_assert!((c.correctness.unwrap() - cc).abs() < 1e-12);
        } else {
            prop_assert!(c.exact_match.is_none());
        }
        let mut shuffled = ms.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(consistency(&shuffled), c);
    }
}
