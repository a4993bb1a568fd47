mod common;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rulesynth::align::{AlignConfig, Mode};
use rulesynth::eval::{match_conjunct, Valuation};
use rulesynth::uapdg::{align_and_merge, project, to_formula, Uapdg};

use common::oracle::valuate;
use common::random_pdg;

#[test]
fn merged_projection_is_satisfied_by_both_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = AlignConfig::default();
    let mut checked = 0;
    for case in 0..400 {
        let v1 = valuate(&mut rng, 7);
        let v2 = valuate(&mut rng, 7);
        let (a1, a2) = (Uapdg::from_vpdg(&v1, 0), Uapdg::from_vpdg(&v2, 1));
        if a1.free_vars() != a2.free_vars() {
            continue;
        }
        let mode = if case % 2 == 0 { Mode::Precondition } else { Mode::Postcondition };
        let merged = align_and_merge(&a1, &a2, mode, &cfg).unwrap();
        for n in &merged.nodes {
            assert!(!n.members.is_empty() && n.members.len() <= 2);
        }
        let core = project(&merged, &BTreeSet::from([0, 1])).unwrap();
        assert!(core.nodes.iter().all(|n| n.members.len() == 2));
        let q = to_formula(&core);
        q.validate().unwrap();
        for (source, v) in [(0, &v1), (1, &v2)] {
            let pins: Valuation = v.valuation.iter().map(|(id, x)| (x.clone(), id.clone())).collect();
            assert!(
                match_conjunct(&v.graph, &q, &pins).is_some(),
                "case {case}: source {source} does not satisfy {q}"
            );
            // The members themselves are a witness.
            let witness: Valuation = core.valuation_for(source).into_iter().map(|(id, x)| (x, id)).collect();
            assert!(match_conjunct(&v.graph, &q, &witness).is_some());
        }
        checked += 1;
    }
    assert!(checked > 200);
}

#[test]
fn bound_variable_names_do_not_change_meaning() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let v1 = valuate(&mut rng, 6);
        let a = Uapdg::from_vpdg(&v1, 0);
        let mut renamed = a.clone();
        renamed.rename_bound("z", 0);
        let (q, r) = (to_formula(&a), to_formula(&renamed));
        for _ in 0..3 {
            let g = random_pdg(&mut rng, 7);
            let pins = Valuation::from([("x0".to_string(), "n0".to_string())]);
            assert_eq!(match_conjunct(&g, &q, &pins).is_some(), match_conjunct(&g, &r, &pins).is_some());
        }
    }
}
