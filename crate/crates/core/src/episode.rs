//! Single-episode rollouts shared by tree search, group sampling and
//! evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::mix_seed;
use crate::model::{PartialQuestion, PatientCase, Trajectory, TrajectoryBuilder};
use crate::oracle::{
    ActionKind, ActionRequest, AnswerScorer, FactChecker, Patient, Policy, PolicyAction,
};
use crate::prompt::{PromptTemplate, TemplateId};

/// The four oracles an episode can touch.
#[derive(Clone, Copy)]
pub struct Oracles<'a> {
    pub policy: &'a dyn Policy,
    pub patient: &'a dyn Patient,
    pub checker: &'a dyn FactChecker,
    pub scorer: &'a dyn AnswerScorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Question budget; the policy is forced to answer once it is spent.
    pub max_questions: usize,
    pub temperature: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_questions: 10,
            temperature: 1.0,
        }
    }
}

/// The rendered doctor instructions for `partial`.
pub fn doctor_prompt(case: &PatientCase, partial: &PartialQuestion) -> Result<String> {
    let option_str = case.option_str();
    let bindings: BTreeMap<&str, &str> = [
        ("question_type", case.question_type.as_str()),
        ("question", partial.rendered_text.as_str()),
        ("option_str", option_str.as_str()),
    ]
    .into_iter()
    .collect();
    PromptTemplate::bundled(TemplateId::DoctorSystem).render(&bindings)
}

/// Asks the policy for its next move, enforcing the question budget.
///
/// An ask returned while an answer was forced is converted into an answer
/// (usually with no parsable option, so it scores as incorrect).
pub fn next_action(
    policy: &dyn Policy,
    case: &PatientCase,
    partial: &PartialQuestion,
    history: &[(String, String)],
    forced_answer: bool,
    temperature: f64,
    sample_seed: u64,
) -> Result<PolicyAction> {
    let req = ActionRequest {
        case,
        partial,
        history,
        forced_answer,
        temperature,
        sample_seed,
    };
    let action = policy.next_action(&req)?;
    if forced_answer && action.kind == ActionKind::Ask {
        tracing::warn!(case = %case.case_id, "policy asked after the question budget was spent");
        let mut converted =
            PolicyAction::from_text(ActionKind::Answer, format!("answer: {}", action.body()));
        if action.per_token_logprob.is_some() {
            converted = converted.with_sequence_logprob(0.0);
        }
        return Ok(converted);
    }
    if action.tokens.is_empty() {
        return Err(Error::OracleRetryable(
            "policy produced an empty action".into(),
        ));
    }
    Ok(action)
}

/// Continues a dialogue from `prefix` (asks already taken, with their patient
/// responses) until the policy answers or the budget forces an answer.
///
/// Each policy call receives `mix_seed(seed, turn)` as its sampling seed.
pub fn rollout_from(
    oracles: &Oracles<'_>,
    case: &PatientCase,
    partial: &PartialQuestion,
    prefix: &[(PolicyAction, String)],
    config: &EpisodeConfig,
    seed: u64,
) -> Result<Trajectory> {
    let mut builder = TrajectoryBuilder::new(partial.clone(), &doctor_prompt(case, partial)?);
    let mut history: Vec<(String, String)> = Vec::with_capacity(config.max_questions);
    for (action, response) in prefix {
        builder.push_turn(action, response, None)?;
        history.push((action.text.clone(), response.clone()));
    }
    let valid = case.valid_letters();
    loop {
        let turn = history.len();
        let forced = turn >= config.max_questions;
        let action = next_action(
            oracles.policy,
            case,
            partial,
            &history,
            forced,
            config.temperature,
            mix_seed(seed, turn as u64),
        )
        .map_err(|e| e.context(format!("{} turn {turn}", case.case_id)))?;
        match action.kind {
            ActionKind::Answer => return builder.finish(&action, &valid),
            ActionKind::Ask => {
                let response = oracles
                    .patient
                    .respond(action.body(), &case.facts)
                    .map_err(|e| e.context(format!("{} patient turn {turn}", case.case_id)))?;
                builder.push_turn(&action, &response, None)?;
                history.push((action.text.clone(), response));
            }
        }
    }
}

/// One episode from the partial question alone.
pub fn run_episode(
    oracles: &Oracles<'_>,
    case: &PatientCase,
    partial: &PartialQuestion,
    config: &EpisodeConfig,
    seed: u64,
) -> Result<Trajectory> {
    rollout_from(oracles, case, partial, &[], config, seed)
}
