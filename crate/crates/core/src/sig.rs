//! Coverage tracking, information gain, Shapley information gain (SIG) and
//! the trajectory reward `R(τ) = α·1(correct) + β·Σ_t SIG(q_t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AtomicFact, FactCoverage, FactId, PatientCase, Trajectory};
use crate::oracle::{map_honoring, FactChecker, Policy};
use crate::shapley::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SigParams {
    fn default() -> Self {
        SigParams {
            alpha: 2.0,
            beta: 1.0,
        }
    }
}

impl SigParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "alpha and beta must be non-negative (got {}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn reward(&self, correct: bool, sig_sum: f64) -> f64 {
        self.alpha * f64::from(u8::from(correct)) + self.beta * sig_sum
    }
}

/// Which facts `understanding` entails, one checker call per fact.
pub fn fact_coverage(
    checker: &dyn FactChecker,
    understanding: &str,
    facts: &[AtomicFact],
) -> Result<FactCoverage> {
    let bits = map_honoring(checker.capabilities(), facts, |f| {
        checker.entails(understanding, f)
    });
    Ok(FactCoverage(bits.into_iter().collect::<Result<_>>()?))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvariantViolation(format!(
            "coverage lengths differ: {a} vs {b}"
        )));
    }
    Ok(())
}

fn indicator(b: bool) -> f64 {
    f64::from(u8::from(b))
}

/// `(1/n) Σ_i (curr_i − prev_i)`.
pub fn information_gain(prev: &FactCoverage, curr: &FactCoverage) -> Result<f64> {
    check_lengths(prev.len(), curr.len())?;
    if prev.is_empty() {
        return Err(Error::InvalidInput(
            "information gain over zero facts".into(),
        ));
    }
    let diff: f64 = prev
        .0
        .iter()
        .zip(&curr.0)
        .map(|(&p, &c)| indicator(c) - indicator(p))
        .sum();
    Ok(diff / prev.len() as f64)
}

/// `Σ_i w_i (curr_i − prev_i)`.
pub fn sig(weights: &WeightVector, prev: &FactCoverage, curr: &FactCoverage) -> Result<f64> {
    check_lengths(prev.len(), curr.len())?;
    check_lengths(weights.len(), prev.len())?;
    Ok(weights
        .weights
        .iter()
        .zip(prev.0.iter().zip(&curr.0))
        .map(|(w, (&p, &c))| w * (indicator(c) - indicator(p)))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnScore {
    pub ig: f64,
    pub sig: f64,
    pub coverage_before: FactCoverage,
    pub coverage_after: FactCoverage,
    /// The understanding or coverage for this turn could not be obtained;
    /// `ig` and `sig` are then 0 and coverage carries over.
    #[serde(default)]
    pub unscoreable: bool,
}

impl TurnScore {
    pub fn new_facts(&self) -> Vec<FactId> {
        self.changed(false, true)
    }

    pub fn lost_facts(&self) -> Vec<FactId> {
        self.changed(true, false)
    }

    fn changed(&self, before: bool, after: bool) -> Vec<FactId> {
        self.coverage_before
            .0
            .iter()
            .zip(&self.coverage_after.0)
            .enumerate()
            .filter(|(_, (&b, &a))| b == before && a == after)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub r_tau: f64,
    pub correct: bool,
    pub initial_coverage: FactCoverage,
    pub turns: Vec<TurnScore>,
}

impl TrajectoryScore {
    pub fn sig_sum(&self) -> f64 {
        self.turns.iter().map(|t| t.sig).sum()
    }

    pub fn sigs(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.sig).collect()
    }

    pub fn unscoreable_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.unscoreable).count()
    }
}

/// Understanding and entailment oracles used to score a trajectory.
///
/// Without a policy, scoring relies on understandings stored in the
/// trajectory (offline re-scoring of saved transcripts).
#[derive(Clone, Copy)]
pub struct ScoringOracles<'a> {
    pub policy: Option<&'a dyn Policy>,
    pub checker: &'a dyn FactChecker,
}

fn understanding_at(
    oracles: &ScoringOracles<'_>,
    case: &PatientCase,
    traj: &Trajectory,
    history: &[(String, String)],
    stored: Option<&String>,
) -> Result<String> {
    match (stored, oracles.policy) {
        (Some(u), _) => Ok(u.clone()),
        (None, Some(policy)) => policy.understanding(case, &traj.partial, history),
        (None, None) => Err(Error::CapabilityMissing(
            "no stored understanding and no policy to produce one".into(),
        )),
    }
}

/// Scores `traj` and annotates it in place (initial coverage, per-turn
/// understanding, coverage and SIG). Re-invocation yields the same result.
pub fn score_trajectory(
    traj: &mut Trajectory,
    case: &PatientCase,
    oracles: &ScoringOracles<'_>,
    weights: &WeightVector,
    params: &SigParams,
) -> Result<TrajectoryScore> {
    params.validate()?;
    if weights.len() != case.num_facts() {
        return Err(Error::InvariantViolation(format!(
            "{} weights for {} facts",
            weights.len(),
            case.num_facts()
        )));
    }
    let history = traj.history();

    let u0 = understanding_at(
        oracles,
        case,
        traj,
        &[],
        traj.initial_understanding.as_ref(),
    )
    .map_err(|e| e.context(format!("{}: initial understanding", case.case_id)))?;
    let initial = fact_coverage(oracles.checker, &u0, &case.facts)
        .map_err(|e| e.context(format!("{}: initial coverage", case.case_id)))?;
    traj.initial_understanding = Some(u0);
    traj.initial_coverage = Some(initial.clone());

    let mut prev = initial.clone();
    let mut turns = Vec::with_capacity(history.len());
    for t in 0..history.len() {
        let stored = traj.turns[t].understanding_after.clone();
        let outcome = understanding_at(oracles, case, traj, &history[..=t], stored.as_ref())
            .and_then(|u| Ok((fact_coverage(oracles.checker, &u, &case.facts)?, u)));
        let score = match outcome {
            Ok((curr, u)) => {
                traj.turns[t].understanding_after = Some(u);
                TurnScore {
                    ig: information_gain(&prev, &curr)?,
                    sig: sig(weights, &prev, &curr)?,
                    coverage_before: prev.clone(),
                    coverage_after: curr,
                    unscoreable: false,
                }
            }
            Err(e) => {
                tracing::warn!(case = %case.case_id, turn = t, error = %e, "turn unscoreable; SIG set to 0");
                TurnScore {
                    ig: 0.0,
                    sig: 0.0,
                    coverage_before: prev.clone(),
                    coverage_after: prev.clone(),
                    unscoreable: true,
                }
            }
        };
        traj.turns[t].sig_score = Some(score.sig);
        traj.turns[t].coverage_after = Some(score.coverage_after.clone());
        prev = score.coverage_after.clone();
        turns.push(score);
    }

    let correct = traj.is_correct(case);
    let sig_sum: f64 = turns.iter().map(|t| t.sig).sum();
    Ok(TrajectoryScore {
        r_tau: params.reward(correct, sig_sum),
        correct,
        initial_coverage: initial,
        turns,
    })
}

/// Per-turn entry of a [`ScoreReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReport {
    pub ig: f64,
    pub sig: f64,
    pub new_facts: Vec<FactId>,
    pub lost_facts: Vec<FactId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unscoreable: bool,
}

/// JSON score report for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub case_id: String,
    #[serde(rename = "R_tau")]
    pub r_tau: f64,
    pub correct: bool,
    pub turns: Vec<TurnReport>,
}

impl ScoreReport {
    pub fn new(case_id: &str, score: &TrajectoryScore) -> Self {
        ScoreReport {
            case_id: case_id.to_string(),
            r_tau: score.r_tau,
            correct: score.correct,
            turns: score
                .turns
                .iter()
                .map(|t| TurnReport {
                    ig: t.ig,
                    sig: t.sig,
                    new_facts: t.new_facts(),
                    lost_facts: t.lost_facts(),
                    unscoreable: t.unscoreable,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::case_with;
    use crate::oracle::synthetic::{fact_marker, SyntheticChecker};
    use proptest::prelude::*;

    fn cov(bits: &[u8]) -> FactCoverage {
        FactCoverage(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn coverage_from_markers() {
        let case = case_with(4);
        let u = format!("Known findings: {} {}", fact_marker(0), fact_marker(2));
        assert_eq!(
            fact_coverage(&SyntheticChecker, &u, &case.facts).unwrap(),
            cov(&[1, 0, 1, 0])
        );
        assert_eq!(
            fact_coverage(&SyntheticChecker, "", &case.facts).unwrap(),
            cov(&[0, 0, 0, 0])
        );
        let all: String = (0..4).map(fact_marker).collect();
        assert_eq!(
            fact_coverage(&SyntheticChecker, &all, &case.facts).unwrap(),
            cov(&[1, 1, 1, 1])
        );
    }

    #[test]
    fn information_gain_examples() {
        let prev = FactCoverage::empty(10);
        let curr = FactCoverage::from_ids(10, [3, 7]);
        assert!((information_gain(&prev, &curr).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(information_gain(&curr, &curr).unwrap(), 0.0);
        assert_eq!(
            information_gain(&cov(&[1, 0, 0, 0]), &cov(&[0, 0, 0, 0])).unwrap(),
            -0.25
        );
        assert!(matches!(
            information_gain(&cov(&[1]), &cov(&[1, 0])),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn sig_examples() {
        let w = WeightVector {
            weights: vec![0.7, 0.2, 0.1],
        };
        assert!((sig(&w, &cov(&[0, 0, 0]), &cov(&[1, 0, 0])).unwrap() - 0.7).abs() < 1e-15);
        let w = WeightVector {
            weights: vec![0.5, 0.5],
        };
        assert_eq!(sig(&w, &cov(&[0, 1]), &cov(&[1, 0])).unwrap(), 0.0);
        assert!(sig(&w, &cov(&[0]), &cov(&[1])).is_err());
    }

    #[test]
    fn reward_examples() {
        let p = SigParams::default();
        assert!((p.reward(true, 0.3) - 2.3).abs() < 1e-15);
        assert_eq!(p.reward(false, 0.0), 0.0);
        let g = SigParams {
            alpha: 4.0,
            beta: 2.0,
        };
        assert!((g.reward(false, 0.4) - 0.8).abs() < 1e-15);
        assert!(SigParams {
            alpha: -1.0,
            beta: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn turn_report_lists_changes() {
        let t = TurnScore {
            ig: 0.0,
            sig: 0.0,
            coverage_before: cov(&[1, 0, 1]),
            coverage_after: cov(&[0, 1, 1]),
            unscoreable: false,
        };
        assert_eq!(t.new_facts(), vec![1]);
        assert_eq!(t.lost_facts(), vec![0]);
    }

    fn coverage_pair(n: usize) -> impl Strategy<Value = (FactCoverage, FactCoverage)> {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(a, b)| (FactCoverage(a), FactCoverage(b)))
    }

    proptest! {
        #[test]
        fn uniform_sig_equals_ig((prev, curr) in (1usize..20).prop_flat_map(coverage_pair)) {
            let w = WeightVector::uniform(prev.len());
            let s = sig(&w, &prev, &curr).unwrap();
            let ig = information_gain(&prev, &curr).unwrap();
            prop_assert!((s - ig).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
