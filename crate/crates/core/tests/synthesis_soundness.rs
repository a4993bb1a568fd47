mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulesynth::eval::check_rule;
use rulesynth::synth::{synthesize_rule, SynthConfig, SynthError, SynthesisInput};

use common::random_pdg;

#[test]
fn synthesized_rules_separate_their_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut ok, mut failed) = (0, 0);
    for case in 0..150 {
        let input = SynthesisInput {
            name: format!("case{case}"),
            violating: (0..rng.gen_range(1..=4)).map(|_| random_pdg(&mut rng, 8)).collect(),
            conforming: (0..rng.gen_range(0..=4)).map(|_| random_pdg(&mut rng, 8)).collect(),
            config: SynthConfig::default(),
        };
        match synthesize_rule(&input) {
            Ok((rule, _)) => {
                ok += 1;
                for g in &input.violating {
                    assert!(!check_rule(g, &rule).is_empty(), "case {case}: violating example missed\n{rule}");
                }
                for g in &input.conforming {
                    assert!(check_rule(g, &rule).is_empty(), "case {case}: conforming example flagged\n{rule}");
                }
            }
            Err(SynthError::Fail { .. } | SynthError::Budget(_)) => failed += 1,
            Err(e) => panic!("case {case}: {e}"),
        }
    }
    assert!(ok >= 75, "only {ok} successes ({failed} failures)");
}
