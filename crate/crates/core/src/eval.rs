//! Exact-match accuracy with bootstrap mean and standard deviation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, EpisodeConfig, Oracles};
use crate::error::{Error, Result};
use crate::hash::{hash_str, mix_seed};
use crate::model::{partial_for_case, PartialStrategy, PatientCase, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub mean: f64,
    pub std: f64,
    pub resamples: usize,
}

/// Percentage of `true` entries.
pub fn accuracy(correct: &[bool]) -> Result<f64> {
    if correct.is_empty() {
        return Err(Error::UndefinedMetric(
            "accuracy over zero predictions".into(),
        ));
    }
    Ok(100.0 * correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

/// Accuracy over `resamples` with-replacement resamples of the predictions;
/// reports the mean and population standard deviation of the resampled
/// accuracies.
pub fn bootstrap_accuracy(correct: &[bool], resamples: usize, seed: u64) -> Result<Bootstrap> {
    if correct.is_empty() {
        return Err(Error::UndefinedMetric(
            "bootstrap over zero predictions".into(),
        ));
    }
    if resamples == 0 {
        return Err(Error::Config(
            "bootstrap needs at least one resample".into(),
        ));
    }
    let n = correct.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accs: Vec<f64> = (0..resamples)
        .map(|_| {
            let hits = (0..n).filter(|_| correct[rng.random_range(0..n)]).count();
            100.0 * hits as f64 / n as f64
        })
        .collect();
    let mean = accs.iter().sum::<f64>() / resamples as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / resamples as f64;
    Ok(Bootstrap {
        mean,
        std: var.sqrt(),
        resamples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episode: EpisodeConfig,
    pub partial: PartialStrategy,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episode: EpisodeConfig {
                max_questions: 10,
                temperature: 0.0,
            },
            partial: PartialStrategy::FirstFact,
            bootstrap_resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case_id: String,
    pub correct: bool,
    pub predicted: String,
    pub gold: String,
    pub questions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: usize,
    pub correct: usize,
    pub failures: usize,
    pub accuracy: f64,
    pub bootstrap: Bootstrap,
    pub outcomes: Vec<CaseOutcome>,
}

/// One episode per case. Failed episodes count as incorrect and are listed.
pub fn evaluate(
    oracles: &Oracles<'_>,
    cases: &[PatientCase],
    config: &EvalConfig,
) -> Result<(EvalReport, Vec<Option<Trajectory>>)> {
    let episodes = crate::oracle::map_honoring(oracles.policy.capabilities(), cases, |case| {
        let seed = mix_seed(config.seed, hash_str(&case.case_id));
        partial_for_case(case, config.partial, seed)
            .and_then(|p| run_episode(oracles, case, &p, &config.episode, seed))
    });
    let mut outcomes = Vec::with_capacity(cases.len());
    let mut trajectories = Vec::with_capacity(cases.len());
    for (case, ep) in cases.iter().zip(episodes) {
        match ep {
            Ok(t) => {
                outcomes.push(CaseOutcome {
                    case_id: case.case_id.clone(),
                    correct: t.is_correct(case),
                    predicted: t.predicted_options.to_string(),
                    gold: case.gold_answer.to_string(),
                    questions: t.num_questions(),
                    error: None,
                });
                trajectories.push(Some(t));
            }
            Err(e) => {
                outcomes.push(CaseOutcome {
                    case_id: case.case_id.clone(),
                    correct: false,
                    predicted: String::new(),
                    gold: case.gold_answer.to_string(),
                    questions: 0,
                    error: Some(e.to_string()),
                });
                trajectories.push(None);
            }
        }
    }
    let flags: Vec<bool> = outcomes.iter().map(|o| o.correct).collect();
    let report = EvalReport {
        cases: cases.len(),
        correct: flags.iter().filter(|&&c| c).count(),
        failures: outcomes.iter().filter(|o| o.error.is_some()).count(),
        accuracy: accuracy(&flags)?,
        bootstrap: bootstrap_accuracy(&flags, config.bootstrap_resamples, config.seed)?,
        outcomes,
    };
    Ok((report, trajectories))
}
