use ifthen_core::metrics::{component_accuracy, error_distribution, positional_accuracy, sequence_accuracy};
use ifthen_core::{evaluate, parse_sequence, serialize_recipe, Recipe, Slot};
use proptest::prelude::*;

/// Gold tokens compared one index at a time, with no shared helpers.
fn oracle(preds: &[Vec<String>], refs: &[Recipe]) -> (usize, [usize; 4], [usize; 5]) {
    let mut exact = 0;
    let mut per_slot = [0; 4];
    let mut bins = [0; 5];
    for (p, r) in preds.iter().zip(refs) {
        let gold = [
            r.trigger_channel().to_string(),
            format!("{}.{}", r.trigger_channel(), r.trigger_function()),
            r.action_channel().to_string(),
            format!("{}.{}", r.action_channel(), r.action_function()),
        ];
        let mut hits = 0;
        for i in 0..4 {
            if p.get(i) == Some(&gold[i]) {
                per_slot[i] += 1;
                hits += 1;
            }
        }
        let is_exact = hits == 4 && p.len() == 4;
        if is_exact {
            exact += 1;
        }
        bins[if hits == 4 && !is_exact { 1 } else { 4 - hits }] += 1;
    }
    (exact, per_slot, bins)
}

fn name() -> impl Strategy<Value = String> {
    "[a-z]{1,6}( [a-z]{1,6}){0,2}"
}

fn recipe() -> impl Strategy<Value = Recipe> {
    (name(), name(), name(), name()).prop_map(|(a, b, c, d)| Recipe::new(&a, &b, &c, &d).unwrap())
}

/// Gold sequence with some slots replaced, tokens dropped or tokens appended.
fn corrupted() -> impl Strategy<Value = (Recipe, Vec<String>)> {
    (recipe(), prop::array::uniform4(any::<bool>()), 0usize..4, 0usize..3, 0usize..3).prop_map(
        |(r, corrupt, extra, drop, kind)| {
            let mut toks = serialize_recipe(&r).tokens().to_vec();
            for (i, c) in corrupt.iter().enumerate() {
                if *c {
                    toks[i] = format!("{}x", toks[i]);
                }
            }
            match kind {
                0 => toks.truncate(4 - drop),
                1 => toks.extend((0..extra).map(|i| format!("extra{i}"))),
                _ => {}
            }
            (r, toks)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_metric_matches_the_oracle(pairs in prop::collection::vec(corrupted(), 1..40)) {
        let (refs, preds): (Vec<Recipe>, Vec<Vec<String>>) = pairs.into_iter().unzip();
        let n = refs.len();
        let (exact, per_slot, bins) = oracle(&preds, &refs);
        let report = evaluate(&preds, &refs).unwrap();
        prop_assert_eq!(report.counts.exact, exact);
        prop_assert_eq!(report.counts.slot_correct, per_slot);
        prop_assert_eq!(report.counts.errors, bins);
        prop_assert_eq!(sequence_accuracy(&preds, &refs).unwrap(), exact as f64 / n as f64);
        let total: usize = per_slot.iter().sum();
        prop_assert_eq!(positional_accuracy(&preds, &refs).unwrap(), total as f64 / (4 * n) as f64);
        for s in Slot::ALL {
            prop_assert_eq!(component_accuracy(&preds, &refs, s).unwrap(), per_slot[s.index()] as f64 / n as f64);
        }
        prop_assert_eq!(error_distribution(&preds, &refs).unwrap(), bins.map(|b| b as f64 / n as f64));
        report.check_invariants().unwrap();
    }

    #[test]
    fn serialization_round_trips(r in recipe()) {
        let seq = serialize_recipe(&r);
        prop_assert_eq!(parse_sequence(seq.tokens()).unwrap(), r.clone());
        let text = seq.to_string();
        let split: Vec<&str> = text.split(' ').collect();
        prop_assert_eq!(parse_sequence(&split).unwrap(), r);
    }
}

#[test]
fn worked_examples() {
    let r = Recipe::new("ny times", "new article posted", "twitter", "new post").unwrap();
    let gold: Vec<String> = serialize_recipe(&r).tokens().to_vec();
    let mut three = gold.clone();
    three[3] = "twitter.new_photo".into();
    assert_eq!(positional_accuracy(&[three], std::slice::from_ref(&r)).unwrap(), 0.75);
    assert_eq!(sequence_accuracy(&[gold], &[r]).unwrap(), 1.0);
}

#[test]
fn mismatched_or_empty_inputs_are_rejected() {
    let r = Recipe::new("a", "b", "c", "d").unwrap();
    let none: Vec<Vec<String>> = Vec::new();
    assert!(evaluate(&none, std::slice::from_ref(&r)).is_err());
    assert!(evaluate(&none, &[]).is_err());
}
