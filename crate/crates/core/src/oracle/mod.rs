//! Pluggable interfaces for the four external capabilities the engine needs:
//! a doctor policy, a patient, a fact checker, and an answer scorer.
//!
//! Every algorithm in this crate talks to these traits only. The
//! [`synthetic`] implementations are deterministic and make all downstream
//! quantities analytically checkable; the HTTP-backed implementations live in
//! the `sigrl-http` crate.

pub mod cache;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{tokenize, AtomicFact, FactId, OptionSet, PartialQuestion, PatientCase};

pub use cache::{CacheEpoch, CachedChecker, CachedPolicy, CachedScorer};

/// Leading marker of an ask reply.
pub const ASK_MARKER: &str = "question:";
/// Leading marker of an answer reply.
pub const ANSWER_MARKER: &str = "answer:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Ask,
    Answer,
}

/// One doctor move: a follow-up question or a final answer.
///
/// `text` is the full generated message including its protocol marker; it is
/// exactly what enters the token stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAction {
    pub kind: ActionKind,
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_token_logprob: Option<Vec<f64>>,
}

impl PolicyAction {
    pub fn ask(question: &str) -> Self {
        Self::from_text(ActionKind::Ask, format!("{ASK_MARKER} {}", question.trim()))
    }

    pub fn answer(reasoning: &str, options: &OptionSet) -> Self {
        let reasoning = reasoning.trim();
        let text = if reasoning.is_empty() {
            format!("{ANSWER_MARKER} {}", options.answer_marker())
        } else {
            format!("{ANSWER_MARKER} {reasoning} {}", options.answer_marker())
        };
        Self::from_text(ActionKind::Answer, text)
    }

    pub fn from_text(kind: ActionKind, text: String) -> Self {
        let tokens = tokenize(&text);
        PolicyAction {
            kind,
            text,
            tokens,
            per_token_logprob: None,
        }
    }

    /// Attaches a sequence log-prob, placed on the first token.
    pub fn with_sequence_logprob(mut self, logprob: f64) -> Self {
        let mut lp = vec![0.0; self.tokens.len()];
        if let Some(first) = lp.first_mut() {
            *first = logprob;
        }
        self.per_token_logprob = Some(lp);
        self
    }

    /// The message without its leading protocol marker.
    pub fn body(&self) -> &str {
        strip_marker(&self.text)
    }
}

/// Removes a leading `question:` / `answer:` marker (case-insensitive).
pub fn strip_marker(text: &str) -> &str {
    let trimmed = text.trim_start();
    for marker in [ASK_MARKER, ANSWER_MARKER] {
        if trimmed.len() >= marker.len()
            && trimmed.is_char_boundary(marker.len())
            && trimmed[..marker.len()].eq_ignore_ascii_case(marker)
        {
            return trimmed[marker.len()..].trim_start();
        }
    }
    trimmed
}

/// Concurrency and feature descriptor every oracle publishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    /// `Some(1)` forbids concurrent calls; `None` means unbounded.
    pub max_in_flight: Option<usize>,
    pub logprobs: bool,
}

impl Capabilities {
    pub fn allows_concurrency(&self) -> bool {
        self.max_in_flight != Some(1)
    }
}

/// Everything a policy sees when choosing its next move.
#[derive(Debug, Clone, Copy)]
pub struct ActionRequest<'a> {
    pub case: &'a PatientCase,
    pub partial: &'a PartialQuestion,
    /// (question message, patient response) pairs so far.
    pub history: &'a [(String, String)],
    /// Set once the question budget is spent; the policy must answer.
    pub forced_answer: bool,
    pub temperature: f64,
    /// Per-call sampling seed drawn from the caller's RNG.
    pub sample_seed: u64,
}

pub trait Policy: Send + Sync {
    fn next_action(&self, req: &ActionRequest<'_>) -> Result<PolicyAction>;

    /// The model's articulated understanding of the patient after `history`.
    fn understanding(
        &self,
        case: &PatientCase,
        partial: &PartialQuestion,
        history: &[(String, String)],
    ) -> Result<String>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }
}

pub trait Patient: Send + Sync {
    fn respond(&self, question: &str, facts: &[AtomicFact]) -> Result<String>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }
}

pub trait FactChecker: Send + Sync {
    fn entails(&self, understanding: &str, fact: &AtomicFact) -> Result<bool>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }
}

/// The value function `v(S) = log P(A* | Q, S)`.
pub trait AnswerScorer: Send + Sync {
    /// `subset` is sorted and deduplicated.
    fn answer_logprob(&self, case: &PatientCase, subset: &[FactId]) -> Result<f64>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }
}

impl<T: Policy + ?Sized> Policy for &T {
    fn next_action(&self, req: &ActionRequest<'_>) -> Result<PolicyAction> {
        (**self).next_action(req)
    }
    fn understanding(
        &self,
        c: &PatientCase,
        p: &PartialQuestion,
        h: &[(String, String)],
    ) -> Result<String> {
        (**self).understanding(c, p, h)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

impl<T: Patient + ?Sized> Patient for &T {
    fn respond(&self, question: &str, facts: &[AtomicFact]) -> Result<String> {
        (**self).respond(question, facts)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

impl<T: FactChecker + ?Sized> FactChecker for &T {
    fn entails(&self, understanding: &str, fact: &AtomicFact) -> Result<bool> {
        (**self).entails(understanding, fact)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

impl<T: AnswerScorer + ?Sized> AnswerScorer for &T {
    fn answer_logprob(&self, case: &PatientCase, subset: &[FactId]) -> Result<f64> {
        (**self).answer_logprob(case, subset)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

/// Runs `f` over `items`, in parallel when `caps` allows it. Output order
/// always follows input order.
pub(crate) fn map_honoring<T, R, F>(caps: Capabilities, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    if caps.allows_concurrency() && items.len() > 1 {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}
