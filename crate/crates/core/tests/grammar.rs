use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ratsql::fixtures::car_schema;
use ratsql::sql_grammar::{canonical_form, delinearize, exact_match, linearize, parse_sql, render_sql, sample_ast, Grammar};

/// Linearize/delinearize and render/parse/render on one sampled tree.
fn round_trip(seed: u64) -> Result<(), String> {
    let g = Grammar::shipped();
    let schema = car_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ast = sample_ast(g, &mut rng, "car_1", schema.num_columns(), schema.num_tables(), 6);
    let actions = linearize(g, &ast).map_err(|e| e.to_string())?;
    let back = delinearize(g, "car_1", &actions, schema.num_columns(), schema.num_tables()).map_err(|e| e.to_string())?;
    if back != ast {
        return Err("delinearize changed the tree".into());
    }
    let t1 = render_sql(g, &ast, &schema).map_err(|e| e.to_string())?;
    let a2 = parse_sql(&t1, &schema).map_err(|e| format!("{t1}: {e}"))?;
    let t2 = render_sql(g, &a2, &schema).map_err(|e| e.to_string())?;
    if t1 != t2 {
        return Err(format!("{t1} != {t2}"));
    }
    let a3 = parse_sql(&t2, &schema).map_err(|e| format!("{t2}: {e}"))?;
    if !exact_match(g, &a3, &a2).map_err(|e| e.to_string())? {
        return Err(format!("{t2}: {} vs {}", canonical_form(g, &a3), canonical_form(g, &a2)));
    }
    Ok(())
}

#[test]
fn thousand_sampled_trees_round_trip() {
    let failures: Vec<String> = (0..1000).filter_map(|s| round_trip(s).err()).collect();
    assert!(failures.is_empty(), "{} failures, first: {}", failures.len(), failures[0]);
}

proptest! {
    #[test]
    fn sampled_trees_round_trip(seed in any::<u64>()) {
        prop_assert_eq!(round_trip(seed), Ok(()));
    }
}

