//! SIG-guided reward distribution and group-relative policy optimization
//! quantities.
//!
//! A trajectory reward `R(τ) = α·1(correct) + β·Σ SIG(q_t)` is split into
//! per-action rewards that add back up to `R(τ)`, spread onto the tokens of
//! each action, normalized across a group of rollouts, and finally plugged
//! into the clipped surrogate objective. Parameter updates are left to an
//! external trainer.

use std::collections::HashMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, EpisodeConfig, Oracles};
use crate::error::{Error, Result};
use crate::hash::mix_seed;
use crate::model::{PartialQuestion, PatientCase, Trajectory};
use crate::oracle::{map_honoring, AnswerScorer, CacheEpoch};
use crate::shapley::{
    estimate_weights, RecomputePolicy, ShapleySettings, ShapleyVector, WeightVector,
};
use crate::sig::{SigParams, TrajectoryScore};

/// Absolute tolerance of the conservation check.
pub const CONSERVATION_TOL: f64 = 1e-9;
/// Reward standard deviation below which advantages are all zero.
pub const STD_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_q: f64,
    pub lambda_a: f64,
}

impl Default for DistParams {
    fn default() -> Self {
        DistParams {
            alpha: 4.0,
            beta: 2.0,
            lambda_q: 1.0,
            lambda_a: 3.0,
        }
    }
}

impl DistParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.lambda_q, self.lambda_a];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "distribution parameters must be non-negative: {self:?}"
            )));
        }
        if (self.lambda_q + self.lambda_a - self.alpha).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "lambda_q + lambda_a = {} must equal alpha = {}",
                self.lambda_q + self.lambda_a,
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn sig_params(&self) -> SigParams {
        SigParams {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRewardBreakdown {
    pub question_rewards: Vec<f64>,
    pub answer_reward: f64,
    pub weights: Vec<f64>,
    #[serde(rename = "R_tau")]
    pub r_tau: f64,
}

impl ActionRewardBreakdown {
    pub fn total(&self) -> f64 {
        self.question_rewards.iter().sum::<f64>() + self.answer_reward
    }
}

/// Splits `R(τ)` over the questions (with SIG values `sigs`) and the answer.
///
/// Question weights use the positive part of SIG; when no question has
/// positive SIG the correctness share is spread uniformly, and with no
/// questions at all it goes to the answer.
pub fn distribute(
    sigs: &[f64],
    correct: bool,
    params: &DistParams,
) -> Result<ActionRewardBreakdown> {
    params.validate()?;
    if sigs.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite SIG value".into()));
    }
    let c = f64::from(u8::from(correct));
    let t = sigs.len();
    let positive: f64 = sigs.iter().map(|s| s.max(0.0)).sum();
    let weights: Vec<f64> = if t == 0 {
        Vec::new()
    } else if positive > 0.0 {
        sigs.iter().map(|s| s.max(0.0) / positive).collect()
    } else {
        vec![1.0 / t as f64; t]
    };
    let question_rewards: Vec<f64> = sigs
        .iter()
        .zip(&weights)
        .map(|(s, w)| params.beta * s + params.lambda_q * w * c)
        .collect();
    let answer_reward = if t == 0 {
        params.alpha * c
    } else {
        params.lambda_a * c
    };
    let r_tau = params.alpha * c + params.beta * sigs.iter().sum::<f64>();

    let out = ActionRewardBreakdown {
        question_rewards,
        answer_reward,
        weights,
        r_tau,
    };
    let gap = (out.total() - r_tau).abs();
    if gap > CONSERVATION_TOL {
        return Err(Error::InvariantViolation(format!(
            "action rewards sum to {} but R_tau is {r_tau} (gap {gap:e})",
            out.total()
        )));
    }
    Ok(out)
}

/// [`distribute`] for a scored trajectory.
pub fn distribute_scored(
    score: &TrajectoryScore,
    params: &DistParams,
) -> Result<ActionRewardBreakdown> {
    distribute(&score.sigs(), score.correct, params)
}

/// Per-token rewards aligned with a trajectory's token stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRewardVector {
    pub rewards: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Every token of question `t` gets `R(q_t)`, every answer token `R(A')`,
/// everything else 0.
pub fn token_rewards(
    traj: &Trajectory,
    breakdown: &ActionRewardBreakdown,
) -> Result<TokenRewardVector> {
    if traj.turns.len() != breakdown.question_rewards.len() {
        return Err(Error::InvariantViolation(format!(
            "{} turns but {} question rewards",
            traj.turns.len(),
            breakdown.question_rewards.len()
        )));
    }
    let n = traj.tokens.len();
    let mut rewards = vec![0.0; n];
    let spans = traj
        .turns
        .iter()
        .map(|t| t.question_token_span)
        .zip(breakdown.question_rewards.iter().copied())
        .chain(std::iter::once((
            traj.answer_token_span,
            breakdown.answer_reward,
        )));
    for (span, r) in spans {
        if span.is_empty() || span.end > n {
            return Err(Error::InvariantViolation(format!(
                "span {}..{} misaligned",
                span.start, span.end
            )));
        }
        rewards[span.range()].fill(r);
    }
    let mask = traj.mask();
    if rewards.iter().zip(&mask).any(|(r, m)| !m && *r != 0.0) {
        return Err(Error::InvariantViolation(
            "reward on a non-generated token".into(),
        ));
    }
    Ok(TokenRewardVector { rewards, mask })
}

/// Which tokens enter the group mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Model-generated tokens only.
    #[default]
    Masked,
    /// Every token, including the zero rewards of prompts and responses.
    AllTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    /// Per trajectory, per token. Tokens outside the pool get 0.
    pub advantages: Vec<Vec<f64>>,
    pub mean: f64,
    pub std: f64,
    /// The standard deviation was below [`STD_GUARD`]; every advantage is 0.
    pub guard_fired: bool,
}

/// `Â = (r − mean) / std` over the pooled token rewards of the group
/// (population standard deviation).
pub fn group_advantages(group: &[TokenRewardVector], pooling: Pooling) -> Result<GroupAdvantages> {
    if group.len() < 2 {
        return Err(Error::DegenerateGroup(format!(
            "group of {} trajectories",
            group.len()
        )));
    }
    let in_pool = |v: &TokenRewardVector, i: usize| pooling == Pooling::AllTokens || v.mask[i];
    let mut count = 0usize;
    let mut sum = 0.0;
    for v in group {
        if v.rewards.len() != v.mask.len() {
            return Err(Error::InvariantViolation(
                "rewards and mask lengths differ".into(),
            ));
        }
        for (i, r) in v.rewards.iter().enumerate() {
            if in_pool(v, i) {
                count += 1;
                sum += r;
            }
        }
    }
    if count < 2 {
        return Err(Error::DegenerateGroup(format!("{count} pooled tokens")));
    }
    let mean = sum / count as f64;
    let mut sq = 0.0;
    for v in group {
        for (i, r) in v.rewards.iter().enumerate() {
            if in_pool(v, i) {
                sq += (r - mean) * (r - mean);
            }
        }
    }
    let std = (sq / count as f64).sqrt();
    let guard_fired = std < STD_GUARD;
    let advantages = group
        .iter()
        .map(|v| {
            v.rewards
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    if guard_fired || !in_pool(v, i) {
                        0.0
                    } else {
                        (r - mean) / std
                    }
                })
                .collect()
        })
        .collect();
    Ok(GroupAdvantages {
        advantages,
        mean,
        std,
        guard_fired,
    })
}

/// What `|τ_k|` counts in the per-trajectory average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthNorm {
    #[default]
    MaskedTokens,
    AllTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub clip_eps: f64,
    pub length_norm: LengthNorm,
    /// Coefficient of an optional KL penalty against reference log-probs.
    /// Zero disables it.
    pub kl_coef: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            clip_eps: 0.2,
            length_norm: LengthNorm::MaskedTokens,
            kl_coef: 0.0,
        }
    }
}

/// One trajectory's inputs to the surrogate objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSample {
    pub mask: Vec<bool>,
    pub advantages: Vec<f64>,
    pub logp_old: Option<Vec<f64>>,
    pub logp_new: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
}

/// `min(r·Â, clip(r, 1−ε, 1+ε)·Â)` for one token.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

fn require<'a>(v: &'a Option<Vec<f64>>, what: &str, k: usize, n: usize) -> Result<&'a [f64]> {
    match v {
        Some(v) if v.len() == n => Ok(v),
        Some(v) => Err(Error::InvariantViolation(format!(
            "trajectory {k}: {} {what} for {n} tokens",
            v.len()
        ))),
        None => Err(Error::CapabilityMissing(format!(
            "trajectory {k}: no {what} log-probs"
        ))),
    }
}

/// `(1/K) Σ_k (1/|τ_k|) Σ_{i masked} min(r·Â, clip(r, 1±ε)·Â)` with
/// `r = exp(logp_new − logp_old)`, minus the optional KL penalty.
pub fn clipped_objective(group: &[ObjectiveSample], config: &ObjectiveConfig) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::DegenerateGroup("empty group".into()));
    }
    if config.clip_eps.is_nan() || config.clip_eps < 0.0 || config.kl_coef < 0.0 {
        return Err(Error::Config(format!(
            "invalid objective configuration: {config:?}"
        )));
    }
    let mut total = 0.0;
    for (k, s) in group.iter().enumerate() {
        let n = s.mask.len();
        if s.advantages.len() != n {
            return Err(Error::InvariantViolation(format!(
                "trajectory {k}: advantages misaligned"
            )));
        }
        let new = require(&s.logp_new, "new", k, n)?;
        let old = require(&s.logp_old, "old", k, n)?;
        let reference = if config.kl_coef > 0.0 {
            Some(require(&s.logp_ref, "reference", k, n)?)
        } else {
            None
        };
        let masked = s.mask.iter().filter(|&&m| m).count();
        let len = match config.length_norm {
            LengthNorm::MaskedTokens => masked,
            LengthNorm::AllTokens => n,
        };
        if masked == 0 || len == 0 {
            return Err(Error::InvariantViolation(format!(
                "trajectory {k} has no generated tokens"
            )));
        }
        let mut acc = 0.0;
        for i in (0..n).filter(|&i| s.mask[i]) {
            let ratio = (new[i] - old[i]).exp();
            acc += clipped_term(ratio, s.advantages[i], config.clip_eps);
            if let Some(r) = reference {
                let d = r[i] - new[i];
                acc -= config.kl_coef * (d.exp() - d - 1.0);
            }
        }
        total += acc / len as f64;
    }
    Ok(total / group.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub trajectories: Vec<Trajectory>,
    /// Fewer than the requested number of rollouts succeeded.
    pub under_filled: bool,
    pub failures: Vec<String>,
}

/// `k` independent rollouts; rollout `j` uses seed `mix_seed(seed, j)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_group(
    oracles: &Oracles<'_>,
    case: &PatientCase,
    partial: &PartialQuestion,
    k: usize,
    depth_limit: usize,
    temperature: f64,
    seed: u64,
) -> Result<GroupSample> {
    if k < 2 {
        return Err(Error::DegenerateGroup(format!("group size {k}")));
    }
    let cfg = EpisodeConfig {
        max_questions: depth_limit,
        temperature,
    };
    let idx: Vec<u64> = (0..k as u64).collect();
    let outcomes = map_honoring(oracles.policy.capabilities(), &idx, |&j| {
        run_episode(oracles, case, partial, &cfg, mix_seed(seed, j))
    });
    let mut trajectories = Vec::with_capacity(k);
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(t) => trajectories.push(t),
            Err(e) => failures.push(e.to_string()),
        }
    }
    Ok(GroupSample {
        under_filled: trajectories.len() < k,
        trajectories,
        failures,
    })
}

/// Per-trajectory entry of a [`TrainingBundle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleTrajectory {
    pub tokens: Vec<String>,
    pub mask: Vec<u8>,
    pub token_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    #[serde(default)]
    pub logp_old: Option<Vec<f64>>,
}

/// Everything an external optimizer needs for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingBundle {
    pub case_id: String,
    pub trajectories: Vec<BundleTrajectory>,
    pub breakdowns: Vec<ActionRewardBreakdown>,
    #[serde(rename = "R_taus")]
    pub r_taus: Vec<f64>,
    pub advantage_mean: f64,
    pub advantage_std: f64,
    pub guard_fired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

impl TrainingBundle {
    /// Builds the bundle for a scored group.
    pub fn build(
        case_id: &str,
        group: &[(Trajectory, TrajectoryScore)],
        params: &DistParams,
        pooling: Pooling,
    ) -> Result<Self> {
        let mut breakdowns = Vec::with_capacity(group.len());
        let mut vectors = Vec::with_capacity(group.len());
        for (traj, score) in group {
            let b = distribute_scored(score, params)?;
            vectors.push(token_rewards(traj, &b)?);
            breakdowns.push(b);
        }
        let adv = group_advantages(&vectors, pooling)?;
        let trajectories = group
            .iter()
            .zip(vectors)
            .zip(adv.advantages)
            .map(|(((traj, _), v), a)| BundleTrajectory {
                tokens: traj.tokens.iter().map(|t| t.text.clone()).collect(),
                mask: v.mask.iter().map(|&m| u8::from(m)).collect(),
                token_rewards: v.rewards,
                advantages: a,
                logp_old: traj.logprobs.clone(),
            })
            .collect();
        Ok(TrainingBundle {
            case_id: case_id.to_string(),
            trajectories,
            r_taus: breakdowns.iter().map(|b| b.r_tau).collect(),
            breakdowns,
            advantage_mean: adv.mean,
            advantage_std: adv.std,
            guard_fired: adv.guard_fired,
            objective: None,
        })
    }

    /// Objective inputs given new-policy log-probs per trajectory.
    pub fn objective_samples(&self, logp_new: &[Vec<f64>]) -> Result<Vec<ObjectiveSample>> {
        if logp_new.len() != self.trajectories.len() {
            return Err(Error::InvalidInput(format!(
                "{} new log-prob vectors for {} trajectories",
                logp_new.len(),
                self.trajectories.len()
            )));
        }
        Ok(self
            .trajectories
            .iter()
            .zip(logp_new)
            .map(|(t, new)| ObjectiveSample {
                mask: t.mask.iter().map(|&m| m == 1).collect(),
                advantages: t.advantages.clone(),
                logp_old: t.logp_old.clone(),
                logp_new: Some(new.clone()),
                logp_ref: None,
            })
            .collect())
    }
}

/// Shapley weights per case, recomputed according to a [`RecomputePolicy`].
///
/// Under `per-update-step`, [`WeightProvider::begin_update_step`] bumps the
/// shared cache epoch so that both the memoized weights and any cached
/// scorer calls are refreshed against the updated model.
pub struct WeightProvider<S> {
    scorer: S,
    settings: ShapleySettings,
    epoch: CacheEpoch,
    memo: Mutex<HashMap<String, (u64, ShapleyVector, WeightVector)>>,
}

impl<S: AnswerScorer> WeightProvider<S> {
    pub fn new(scorer: S, settings: ShapleySettings, epoch: CacheEpoch) -> Self {
        WeightProvider {
            scorer,
            settings,
            epoch,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn epoch(&self) -> &CacheEpoch {
        &self.epoch
    }

    /// Marks a policy update boundary.
    pub fn begin_update_step(&self) {
        if self.settings.recompute == RecomputePolicy::PerUpdateStep {
            self.epoch.bump();
        }
    }

    pub fn weights(&self, case: &PatientCase) -> Result<(ShapleyVector, WeightVector)> {
        let epoch = self.epoch.current();
        if let Some((e, phi, w)) = self.memo.lock().get(&case.case_id) {
            if *e == epoch {
                return Ok((phi.clone(), w.clone()));
            }
        }
        let (phi, w) = estimate_weights(&self.scorer, case, &self.settings)?;
        self.memo
            .lock()
            .insert(case.case_id.clone(), (epoch, phi.clone(), w.clone()));
        Ok((phi, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_partial_question, PartialStrategy};
    use crate::oracle::synthetic::{
        generate_cases, SyntheticCaseParams, SyntheticChecker, SyntheticPatient, SyntheticPolicy,
        SyntheticScorer,
    };
    use crate::shapley::ShapleyMethod;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn distribute_examples() {
        let p = DistParams::default();
        let b = distribute(&[0.3, 0.1], true, &p).unwrap();
        assert!((b.weights[0] - 0.75).abs() < 1e-12 && (b.weights[1] - 0.25).abs() < 1e-12);
        assert!((b.question_rewards[0] - 1.35).abs() < 1e-12);
        assert!((b.question_rewards[1] - 0.45).abs() < 1e-12);
        assert_eq!(b.answer_reward, 3.0);
        assert!((b.total() - 4.8).abs() < 1e-12 && (b.r_tau - 4.8).abs() < 1e-12);

        let b = distribute(&[0.3, -0.1], false, &p).unwrap();
        assert!(
            (b.question_rewards[0] - 0.6).abs() < 1e-12
                && (b.question_rewards[1] + 0.2).abs() < 1e-12
        );
        assert_eq!(b.answer_reward, 0.0);

        let b = distribute(&[], true, &p).unwrap();
        assert_eq!(b.answer_reward, 4.0);
        assert_eq!(b.r_tau, 4.0);

        let b = distribute(&[0.0, -0.2], true, &p).unwrap();
        assert_eq!(b.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn params_must_preserve_correctness_mass() {
        let bad = DistParams {
            lambda_q: 2.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn advantage_examples() {
        let g = vec![
            TokenRewardVector {
                rewards: vec![1.0, 0.0, 2.0],
                mask: vec![true, false, true],
            },
            TokenRewardVector {
                rewards: vec![3.0],
                mask: vec![true],
            },
        ];
        let a = group_advantages(&g, Pooling::Masked).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        assert!((a.std - s).abs() < 1e-12);
        assert!((a.advantages[0][0] + 1.0 / s).abs() < 1e-12);
        assert_eq!(a.advantages[0][1], 0.0);
        assert!((a.advantages[1][0] - 1.224744871391589).abs() < 1e-12);

        let flat = vec![
            TokenRewardVector {
                rewards: vec![2.0, 2.0],
                mask: vec![true, true],
            },
            TokenRewardVector {
                rewards: vec![2.0],
                mask: vec![true],
            },
        ];
        let a = group_advantages(&flat, Pooling::Masked).unwrap();
        assert!(a.guard_fired);
        assert!(a.advantages.iter().flatten().all(|&x| x == 0.0));

        assert!(matches!(
            group_advantages(&g[..1], Pooling::Masked),
            Err(Error::DegenerateGroup(_))
        ));
    }

    #[test]
    fn objective_examples() {
        assert!((clipped_term(2.0, 1.5, 0.2) - 1.2 * 1.5).abs() < 1e-15);
        // Â < 0: min(0.5·Â, 0.8·Â) is the clipped 0.8·Â, the smaller value.
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert!((clipped_term(2.0, -1.0, 0.2) + 2.0).abs() < 1e-15);
        assert!((clipped_term(1.1, 1.0, 0.2) - 1.1).abs() < 1e-15);
        let s = ObjectiveSample {
            mask: vec![true, false, true],
            advantages: vec![1.0, 0.0, 3.0],
            logp_old: Some(vec![-1.0, 0.0, -2.0]),
            logp_new: Some(vec![-1.0, 0.0, -2.0]),
            logp_ref: None,
        };
        let t = ObjectiveSample {
            advantages: vec![-1.0, 0.0, -1.0],
            ..s.clone()
        };
        let v = clipped_objective(&[s.clone(), t], &ObjectiveConfig::default()).unwrap();
        assert!((v - 0.5 * (2.0 - 1.0)).abs() < 1e-12);
        let missing = ObjectiveSample {
            logp_new: None,
            ..s
        };
        assert!(matches!(
            clipped_objective(&[missing], &ObjectiveConfig::default()),
            Err(Error::CapabilityMissing(_))
        ));
    }

    #[test]
    fn sample_group_contracts() {
        let case = generate_cases(1, &SyntheticCaseParams::default(), 2)
            .unwrap()
            .remove(0);
        let partial = build_partial_question(&case, PartialStrategy::FirstFact, 0).unwrap();
        let scorer = SyntheticScorer::for_case(&case);
        let policy = SyntheticPolicy::default();
        let o = Oracles {
            policy: &policy,
            patient: &SyntheticPatient,
            checker: &SyntheticChecker,
            scorer: &scorer,
        };
        let g = sample_group(&o, &case, &partial, 4, 10, 0.0, 1).unwrap();
        assert!(g.trajectories.windows(2).all(|w| w[0] == w[1]));
        let a = sample_group(&o, &case, &partial, 4, 10, 1.0, 9).unwrap();
        let b = sample_group(&o, &case, &partial, 4, 10, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(!a.under_filled);
        let z = sample_group(&o, &case, &partial, 4, 0, 1.0, 9).unwrap();
        assert!(z.trajectories.iter().all(|t| t.turns.is_empty()));
        assert!(sample_group(&o, &case, &partial, 1, 10, 1.0, 9).is_err());
    }

    struct Counting(SyntheticScorer, AtomicUsize);

    impl AnswerScorer for Counting {
        fn answer_logprob(&self, case: &PatientCase, subset: &[usize]) -> Result<f64> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.answer_logprob(case, subset)
        }
    }

    #[test]
    fn weight_provider_recomputes_per_update_step() {
        let case = generate_cases(1, &SyntheticCaseParams::default(), 2)
            .unwrap()
            .remove(0);
        for (policy, expected) in [
            (RecomputePolicy::PerCase, 1),
            (RecomputePolicy::PerUpdateStep, 2),
        ] {
            let settings = ShapleySettings {
                method: ShapleyMethod::Exact,
                recompute: policy,
                ..Default::default()
            };
            let scorer = Counting(SyntheticScorer::for_case(&case), AtomicUsize::new(0));
            let wp = WeightProvider::new(&scorer, settings, CacheEpoch::new());
            wp.weights(&case).unwrap();
            wp.weights(&case).unwrap();
            wp.begin_update_step();
            wp.weights(&case).unwrap();
            assert_eq!(scorer.1.load(Ordering::SeqCst), expected * 64);
        }
    }

    fn dist_inputs() -> impl Strategy<Value = (Vec<f64>, bool, DistParams)> {
        (
            prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 0..12),
            any::<bool>(),
            0.0f64..10.0,
            0.0f64..1.0,
            0.0f64..10.0,
        )
            .prop_map(|(s, c, alpha, frac, beta)| {
                (
                    s,
                    c,
                    DistParams {
                        alpha,
                        beta,
                        lambda_q: alpha * frac,
                        lambda_a: alpha - alpha * frac,
                    },
                )
            })
    }

    proptest! {
        #[test]
        fn conservation_holds((sigs, correct, params) in dist_inputs()) {
            let b = distribute(&sigs, correct, &params).unwrap();
            prop_assert!((b.total() - b.r_tau).abs() <= CONSERVATION_TOL);
            if correct && !sigs.is_empty() {
                prop_assert!((b.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn affine_shift_leaves_advantages(rewards in prop::collection::vec(-5.0f64..5.0, 4..20), c in -10.0f64..10.0) {
            let half = rewards.len() / 2;
            let mk = |r: &[f64]| TokenRewardVector { rewards: r.to_vec(), mask: vec![true; r.len()] };
            let g = vec![mk(&rewards[..half]), mk(&rewards[half..])];
            let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
            let h = vec![mk(&shifted[..half]), mk(&shifted[half..])];
            let a = group_advantages(&g, Pooling::Masked).unwrap();
            let b = group_advantages(&h, Pooling::Masked).unwrap();
            prop_assume!(a.std > 1e-3);
            for (x, y) in a.advantages.iter().flatten().zip(b.advantages.iter().flatten()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn monotone_in_sig(sigs in prop::collection::vec(0.0f64..1.0, 1..6), bump in 1e-3f64..1.0, idx in any::<prop::sample::Index>()) {
            let p = DistParams::default();
            let i = idx.index(sigs.len());
            let a = distribute(&sigs, true, &p).unwrap();
            let mut more = sigs.clone();
            more[i] += bump;
            let b = distribute(&more, true, &p).unwrap();
            prop_assert!(b.question_rewards[i] > a.question_rewards[i]);
        }
    }
}
