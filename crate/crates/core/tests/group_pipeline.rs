//! Sample, score and bundle a group through the public API, then check the
//! bundle against quantities recomputed from the scored trajectories.

use proptest::prelude::*;
use sigrl::episode::Oracles;
use sigrl::grpo::{
    clipped_objective, sample_group, DistParams, ObjectiveConfig, Pooling, TrainingBundle,
};
use sigrl::model::{build_partial_question, cases_to_jsonl, parse_cases, PartialStrategy};
use sigrl::oracle::synthetic::{
    generate_cases, CaseSpecScorer, SyntheticCaseParams, SyntheticChecker, SyntheticPatient,
    SyntheticPolicy,
};
use sigrl::shapley::{exact_shapley, softmax_weights};
use sigrl::sig::{score_trajectory, ScoringOracles};

fn bundle_for(seed: u64, k: usize) -> Option<TrainingBundle> {
    let case = generate_cases(1, &SyntheticCaseParams::default(), seed)
        .unwrap()
        .remove(0);
    let policy = SyntheticPolicy::default();
    let oracles = Oracles {
        policy: &policy,
        patient: &SyntheticPatient,
        checker: &SyntheticChecker,
        scorer: &CaseSpecScorer,
    };
    let partial = build_partial_question(&case, PartialStrategy::FirstFact, seed).unwrap();
    let group = sample_group(&oracles, &case, &partial, k, 6, 1.0, seed).unwrap();
    assert!(!group.under_filled, "{:?}", group.failures);

    let weights = softmax_weights(&exact_shapley(&CaseSpecScorer, &case, 12).unwrap()).unwrap();
    let params = DistParams::default();
    let scoring = ScoringOracles {
        policy: Some(&policy),
        checker: &SyntheticChecker,
    };
    let scored: Vec<_> = group
        .trajectories
        .into_iter()
        .map(|mut t| {
            let s =
                score_trajectory(&mut t, &case, &scoring, &weights, &params.sig_params()).unwrap();
            (t, s)
        })
        .collect();

    let bundle = TrainingBundle::build(&case.case_id, &scored, &params, Pooling::Masked).unwrap();
    for ((_, s), r) in scored.iter().zip(&bundle.r_taus) {
        let expected = params.alpha * f64::from(u8::from(s.correct))
            + params.beta * s.sigs().iter().sum::<f64>();
        assert!((r - expected).abs() < 1e-9);
    }
    (!bundle.guard_fired).then_some(bundle)
}

#[test]
fn bundle_advantages_are_normalized_over_generated_tokens() {
    let mut checked = 0;
    for seed in 0..20 {
        let Some(b) = bundle_for(seed, 4) else {
            continue;
        };
        let pooled: Vec<f64> = b
            .trajectories
            .iter()
            .flat_map(|t| t.advantages.iter().zip(&t.mask))
            .filter(|(_, &m)| m == 1)
            .map(|(a, _)| *a)
            .collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let var = pooled.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9, "seed {seed}: mean {mean}");
        assert!(
            (var.sqrt() - 1.0).abs() < 1e-9,
            "seed {seed}: std {}",
            var.sqrt()
        );
        for t in &b.trajectories {
            for (i, &m) in t.mask.iter().enumerate() {
                if m == 0 {
                    assert_eq!((t.advantages[i], t.token_rewards[i]), (0.0, 0.0));
                }
            }
        }
        checked += 1;
    }
    assert!(checked > 10, "only {checked} groups had reward variance");
}

#[test]
fn unchanged_policy_objective_is_the_mean_masked_advantage() {
    let b = (0..20).find_map(|s| bundle_for(s, 3)).unwrap();
    let logp_new: Vec<Vec<f64>> = b
        .trajectories
        .iter()
        .map(|t| t.logp_old.clone().unwrap())
        .collect();
    let samples = b.objective_samples(&logp_new).unwrap();
    let got = clipped_objective(&samples, &ObjectiveConfig::default()).unwrap();
    let expected = b
        .trajectories
        .iter()
        .map(|t| {
            let masked: Vec<f64> = t
                .advantages
                .iter()
                .zip(&t.mask)
                .filter(|(_, &m)| m == 1)
                .map(|(a, _)| *a)
                .collect();
            masked.iter().sum::<f64>() / masked.len() as f64
        })
        .sum::<f64>()
        / b.trajectories.len() as f64;
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn bundle_survives_a_json_round_trip_bit_for_bit() {
    let b = (0..20).find_map(|s| bundle_for(s, 4)).unwrap();
    let text = serde_json::to_string(&b).unwrap();
    let back: TrainingBundle = serde_json::from_str(&text).unwrap();
    assert_eq!(back, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_cases_round_trip_through_jsonl(
        count in 1usize..6,
        num_facts in 3usize..9,
        seed in any::<u64>(),
    ) {
        let params = SyntheticCaseParams {
            num_facts,
            num_required: 2,
            ..Default::default()
        };
        let cases = generate_cases(count, &params, seed).unwrap();
        let back = parse_cases(&cases_to_jsonl(&cases).unwrap()).unwrap();
        prop_assert_eq!(back, cases);
    }
}
