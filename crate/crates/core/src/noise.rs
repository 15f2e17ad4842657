//! Noise-injection benchmark: insert irrelevant facts into cases and measure
//! how well Shapley values and the leave-one-out baseline rank the relevant
//! facts above them (Recall@K).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{hash_str, mix_seed};
use crate::model::{AtomicFact, FactId, OptionSet, PatientCase};
use crate::oracle::synthetic::SyntheticValueSpec;
use crate::oracle::AnswerScorer;
use crate::shapley::{
    exact_shapley, loo_importance, mc_shapley, recall_at_k, McShapleyConfig, ShapleyMethod,
};

/// Inserts `dummies` as irrelevant facts at seeded random positions.
///
/// Fact ids are renumbered; the synthetic spec (dummies get weight 0),
/// required set and partial-question ids are remapped to match.
pub fn inject_noise(case: &PatientCase, dummies: &[String], seed: u64) -> Result<PatientCase> {
    let n = case.num_facts() + dummies.len();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, hash_str(&case.case_id)));
    // slot[i] = Some(old id) for original facts, None for dummies
    let mut slots: Vec<Option<FactId>> = (0..case.num_facts())
        .map(Some)
        .chain(dummies.iter().map(|_| None))
        .collect();
    slots.shuffle(&mut rng);
    let mut new_id = vec![0; case.num_facts()];
    let mut dummy_iter = dummies.iter();
    let mut facts = Vec::with_capacity(n);
    for (pos, slot) in slots.iter().enumerate() {
        let (text, is_relevant) = match slot {
            Some(old) => {
                new_id[*old] = pos;
                (case.facts[*old].text.clone(), case.facts[*old].is_relevant)
            }
            None => (dummy_iter.next().cloned().unwrap_or_default(), false),
        };
        facts.push(AtomicFact {
            id: pos,
            text,
            is_relevant,
        });
    }
    let synthetic = case.synthetic.as_ref().map(|spec| {
        let mut weights = vec![0.0; n];
        for (old, &w) in spec.weights.iter().enumerate() {
            weights[new_id[old]] = w;
        }
        let mut required: Vec<FactId> = spec.required.iter().map(|&r| new_id[r]).collect();
        required.sort_unstable();
        SyntheticValueSpec {
            weights,
            required,
            ..spec.clone()
        }
    });
    let partial_fact_ids = case.partial_fact_ids.as_ref().map(|ids| {
        let mut v: Vec<FactId> = ids.iter().map(|&i| new_id[i]).collect();
        v.sort_unstable();
        v
    });
    let out = PatientCase {
        facts,
        synthetic,
        partial_fact_ids,
        ..case.clone()
    };
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseBenchConfig {
    pub cases: usize,
    /// Conjunctive facts (weight 0; only jointly valuable).
    pub required: usize,
    /// Individually informative facts with weights drawn from `extra_weight_range`.
    pub extra_relevant: usize,
    pub dummies: usize,
    pub bonus_range: (f64, f64),
    pub extra_weight_range: (f64, f64),
    pub ks: Vec<usize>,
    pub method: ShapleyMethod,
    pub subset_limit: usize,
    pub monte_carlo: McShapleyConfig,
    pub seed: u64,
}

impl Default for NoiseBenchConfig {
    fn default() -> Self {
        NoiseBenchConfig {
            cases: 100,
            required: 3,
            extra_relevant: 4,
            dummies: 5,
            bonus_range: (0.5, 1.5),
            extra_weight_range: (0.05, 0.3),
            ks: vec![1, 3, 10],
            method: ShapleyMethod::Exact,
            subset_limit: crate::shapley::DEFAULT_SUBSET_LIMIT,
            monte_carlo: McShapleyConfig::default(),
            seed: 0,
        }
    }
}

/// A synthetic case made only of relevant facts, before noise injection.
pub fn relevant_case(index: usize, config: &NoiseBenchConfig) -> Result<PatientCase> {
    let n = config.required + config.extra_relevant;
    if n == 0 {
        return Err(Error::Config(
            "noise bench needs at least one relevant fact".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, index as u64));
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let bonus = draw(&mut rng, config.bonus_range);
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            if i < config.required {
                0.0
            } else {
                draw(&mut rng, config.extra_weight_range)
            }
        })
        .collect();
    let facts = (0..n)
        .map(|id| AtomicFact {
            id,
            text: format!("Relevant finding {id} of case {index}."),
            is_relevant: true,
        })
        .collect();
    let case = PatientCase {
        case_id: format!("noise-{index:04}"),
        question_type: "diagnosis".into(),
        atomic_question: "What is the most likely diagnosis?".into(),
        facts,
        options: ['A', 'B', 'C', 'D']
            .iter()
            .map(|&l| (l, format!("Condition {l}")))
            .collect(),
        gold_answer: OptionSet::new(['A']),
        partial_fact_ids: None,
        synthetic: Some(SyntheticValueSpec::conjunctive(
            weights,
            (0..config.required).collect(),
            bonus,
            -3.0,
        )),
    };
    case.validate()?;
    Ok(case)
}

/// Noise-injected synthetic cases for the benchmark.
pub fn noise_cases(config: &NoiseBenchConfig) -> Result<Vec<PatientCase>> {
    (0..config.cases)
        .map(|i| {
            let base = relevant_case(i, config)?;
            let dummies: Vec<String> = (0..config.dummies)
                .map(|d| format!("Unrelated remark {d} of case {i}."))
                .collect();
            inject_noise(&base, &dummies, config.seed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecall {
    pub case_id: String,
    pub shapley: Vec<f64>,
    pub loo: Vec<f64>,
    pub shapley_values: Vec<f64>,
    pub loo_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBenchReport {
    pub cases: usize,
    pub ks: Vec<usize>,
    /// Mean Recall@K per K, keyed by K.
    pub shapley: BTreeMap<usize, f64>,
    pub loo: BTreeMap<usize, f64>,
    pub per_case: Vec<CaseRecall>,
}

/// Scores every case with both methods and averages Recall@K.
pub fn run_noise_bench(
    scorer: &dyn AnswerScorer,
    cases: &[PatientCase],
    ks: &[usize],
    method: ShapleyMethod,
    subset_limit: usize,
    monte_carlo: &McShapleyConfig,
) -> Result<NoiseBenchReport> {
    if cases.is_empty() {
        return Err(Error::InvalidInput("no cases".into()));
    }
    let mut per_case = Vec::with_capacity(cases.len());
    for case in cases {
        let relevant = case.relevant_mask();
        for &k in ks {
            if k == 0 || k > case.num_facts() {
                return Err(Error::InvalidInput(format!(
                    "K = {k} outside 1..={} for case {}",
                    case.num_facts(),
                    case.case_id
                )));
            }
        }
        let phi = match method {
            ShapleyMethod::Exact => exact_shapley(scorer, case, subset_limit)?,
            ShapleyMethod::MonteCarlo => mc_shapley(scorer, case, monte_carlo)?,
        };
        let loo = loo_importance(scorer, case)?;
        let recall = |imp: &[f64]| -> Result<Vec<f64>> {
            ks.iter().map(|&k| recall_at_k(imp, &relevant, k)).collect()
        };
        per_case.push(CaseRecall {
            case_id: case.case_id.clone(),
            shapley: recall(&phi.values)?,
            loo: recall(&loo)?,
            shapley_values: phi.values,
            loo_values: loo,
        });
    }
    let mean = |pick: fn(&CaseRecall) -> &Vec<f64>| -> BTreeMap<usize, f64> {
        ks.iter()
            .enumerate()
            .map(|(j, &k)| {
                (
                    k,
                    per_case.iter().map(|c| pick(c)[j]).sum::<f64>() / per_case.len() as f64,
                )
            })
            .collect()
    };
    Ok(NoiseBenchReport {
        cases: cases.len(),
        ks: ks.to_vec(),
        shapley: mean(|c| &c.shapley),
        loo: mean(|c| &c.loo),
        per_case,
    })
}
