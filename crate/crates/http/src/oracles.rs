//! Oracle trait implementations backed by chat-completions endpoints.

use std::sync::atomic::{AtomicU64, Ordering};

use sigrl::episode::doctor_prompt;
use sigrl::model::{AtomicFact, FactId, PartialQuestion, PatientCase};
use sigrl::oracle::{
    ActionRequest, AnswerScorer, Capabilities, FactChecker, Patient, Policy, PolicyAction,
};
use sigrl::prompt::{parse_doctor_reply, render, TemplateId};
use sigrl::{Error, Result};

use crate::client::{ChatClient, ChatOptions, Message, TokenLogprob};
use crate::config::Endpoints;

/// Log-probability assigned when the gold letter is absent from the
/// returned alternatives.
pub const LOGPROB_FLOOR: f64 = -30.0;

const BEGIN_MESSAGE: &str = "Please begin.";
const FORCE_ANSWER_MESSAGE: &str =
    "You have used all your questions. Give your final answer now, starting with \"answer:\".";

fn capabilities(client: &ChatClient) -> Capabilities {
    Capabilities {
        max_in_flight: client.config().max_in_flight,
        logprobs: client.config().logprobs_supported,
    }
}

/// Chat transcript the doctor model sees for `req`.
pub fn doctor_messages(req: &ActionRequest<'_>) -> Result<Vec<Message>> {
    let mut messages = vec![Message::system(doctor_prompt(req.case, req.partial)?)];
    if req.history.is_empty() {
        messages.push(Message::user(BEGIN_MESSAGE));
    }
    for (question, response) in req.history {
        messages.push(Message::assistant(question.clone()));
        messages.push(Message::user(response.clone()));
    }
    if req.forced_answer {
        messages.push(Message::user(FORCE_ANSWER_MESSAGE));
    }
    Ok(messages)
}

fn render_dialogue(history: &[(String, String)]) -> String {
    if history.is_empty() {
        return "(no questions asked yet)".into();
    }
    history
        .iter()
        .map(|(q, r)| format!("Doctor: {q}\nPatient: {r}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Doctor policy. Uses separate clients for actions and understanding
/// summaries so the two can point at different models.
#[derive(Debug)]
pub struct HttpPolicy {
    actions: ChatClient,
    understanding: ChatClient,
    deviations: AtomicU64,
}

impl HttpPolicy {
    pub fn new(endpoints: &Endpoints) -> Result<Self> {
        Ok(HttpPolicy {
            actions: ChatClient::new(endpoints.policy.clone())?,
            understanding: ChatClient::new(endpoints.understanding().clone())?,
            deviations: AtomicU64::new(0),
        })
    }

    /// Replies that lacked a protocol marker.
    pub fn deviations(&self) -> u64 {
        self.deviations.load(Ordering::Relaxed)
    }

    pub fn client(&self) -> &ChatClient {
        &self.actions
    }
}

impl Policy for HttpPolicy {
    fn next_action(&self, req: &ActionRequest<'_>) -> Result<PolicyAction> {
        let messages = doctor_messages(req)?;
        let logprobs = self.actions.config().logprobs_supported;
        let options = ChatOptions {
            temperature: Some(req.temperature),
            logprobs,
            seed: Some(req.sample_seed),
            ..Default::default()
        };
        let reply = self.actions.chat(&messages, &options)?;
        let parsed = parse_doctor_reply(&reply.text)?;
        if parsed.deviation {
            self.deviations.fetch_add(1, Ordering::Relaxed);
        }
        let mut action = parsed.action;
        if let Some(lp) = reply.logprobs {
            action = action.with_sequence_logprob(lp.iter().map(|t| t.logprob).sum());
        }
        Ok(action)
    }

    fn understanding(
        &self,
        _case: &PatientCase,
        partial: &PartialQuestion,
        history: &[(String, String)],
    ) -> Result<String> {
        let dialogue = render_dialogue(history);
        let prompt = render(
            TemplateId::Understanding,
            &[
                ("patient_information", partial.rendered_text.as_str()),
                ("dialogue", dialogue.as_str()),
            ],
        )?;
        let reply = self
            .understanding
            .chat(&[Message::user(prompt)], &ChatOptions::default())?;
        Ok(reply.text.trim().to_string())
    }

    fn capabilities(&self) -> Capabilities {
        capabilities(&self.actions)
    }
}

#[derive(Debug)]
pub struct HttpPatient {
    client: ChatClient,
}

impl HttpPatient {
    pub fn new(endpoints: &Endpoints) -> Result<Self> {
        Ok(HttpPatient {
            client: ChatClient::new(endpoints.patient().clone())?,
        })
    }
}

impl Patient for HttpPatient {
    fn respond(&self, question: &str, facts: &[AtomicFact]) -> Result<String> {
        let listing: Vec<String> = facts.iter().map(|f| format!("- {}", f.text)).collect();
        let system = render(
            TemplateId::Patient,
            &[("atomic_facts", listing.join("\n").as_str())],
        )?;
        let reply = self.client.chat(
            &[Message::system(system), Message::user(question)],
            &ChatOptions::default(),
        )?;
        Ok(reply.text.trim().to_string())
    }

    fn capabilities(&self) -> Capabilities {
        capabilities(&self.client)
    }
}

/// Reads a True/False verdict from the start of a reply.
pub fn parse_verdict(text: &str) -> Option<bool> {
    let word: String = text
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

#[derive(Debug)]
pub struct HttpChecker {
    client: ChatClient,
    deviations: AtomicU64,
}

impl HttpChecker {
    pub fn new(endpoints: &Endpoints) -> Result<Self> {
        Ok(HttpChecker {
            client: ChatClient::new(endpoints.checker().clone())?,
            deviations: AtomicU64::new(0),
        })
    }

    /// Replies that were neither True nor False; each counted as not entailed.
    pub fn deviations(&self) -> u64 {
        self.deviations.load(Ordering::Relaxed)
    }
}

impl FactChecker for HttpChecker {
    fn entails(&self, understanding: &str, fact: &AtomicFact) -> Result<bool> {
        let prompt = render(
            TemplateId::FactChecker,
            &[("context", understanding), ("fact", fact.text.as_str())],
        )?;
        let options = ChatOptions {
            temperature: Some(0.0),
            max_tokens: Some(5),
            ..Default::default()
        };
        let reply = self.client.chat(&[Message::user(prompt)], &options)?;
        match parse_verdict(&reply.text) {
            Some(v) => Ok(v),
            None => {
                self.deviations.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(reply = %reply.text, "fact checker reply is neither True nor False");
                Ok(false)
            }
        }
    }

    fn capabilities(&self) -> Capabilities {
        capabilities(&self.client)
    }
}

/// Value function from the scorer model's answer-letter distribution.
///
/// The first generated position that is an option letter is located and the
/// log-probabilities of the gold letters among its alternatives are summed.
#[derive(Debug)]
pub struct HttpScorer {
    client: ChatClient,
}

impl HttpScorer {
    pub fn new(endpoints: &Endpoints) -> Result<Self> {
        let client = ChatClient::new(endpoints.scorer().clone())?;
        if !client.config().logprobs_supported {
            return Err(Error::CapabilityMissing(format!(
                "scorer endpoint {} must provide log-probabilities",
                client.config().url()
            )));
        }
        Ok(HttpScorer { client })
    }

    pub fn prompt(case: &PatientCase, subset: &[FactId]) -> Result<String> {
        let facts: Vec<String> = subset
            .iter()
            .map(|&i| format!("- {}", case.facts[i].text))
            .collect();
        let facts = if facts.is_empty() {
            "(none)".to_string()
        } else {
            facts.join("\n")
        };
        let option_str = case.option_str();
        render(
            TemplateId::AnswerScorer,
            &[
                ("facts", facts.as_str()),
                ("question", case.atomic_question.as_str()),
                ("option_str", option_str.as_str()),
            ],
        )
    }
}

fn letter_of(token: &str) -> Option<char> {
    let t = token
        .trim()
        .trim_matches(|c: char| !c.is_ascii_alphanumeric());
    let mut chars = t.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => Some(c),
        _ => None,
    }
}

/// Sum of gold-letter log-probabilities at the first letter position.
pub fn gold_logprob(case: &PatientCase, tokens: &[TokenLogprob]) -> f64 {
    let valid = case.valid_letters();
    let Some(pos) = tokens
        .iter()
        .find(|t| letter_of(&t.token).is_some_and(|c| valid.contains(&c)))
    else {
        return LOGPROB_FLOOR * case.gold_answer.len() as f64;
    };
    case.gold_answer
        .letters()
        .map(|g| {
            let mut best: Option<f64> = None;
            let candidates = std::iter::once((pos.token.as_str(), pos.logprob)).chain(
                pos.top_logprobs
                    .iter()
                    .map(|t| (t.token.as_str(), t.logprob)),
            );
            for (tok, lp) in candidates {
                if letter_of(tok) == Some(g) {
                    best = Some(best.map_or(lp, |b: f64| b.max(lp)));
                }
            }
            best.unwrap_or(LOGPROB_FLOOR)
        })
        .sum()
}

impl AnswerScorer for HttpScorer {
    fn answer_logprob(&self, case: &PatientCase, subset: &[FactId]) -> Result<f64> {
        if let Some(&bad) = subset.iter().find(|&&i| i >= case.num_facts()) {
            return Err(Error::InvalidInput(format!(
                "fact id {bad} out of range for {}",
                case.case_id
            )));
        }
        let options = ChatOptions {
            temperature: Some(0.0),
            max_tokens: Some(4),
            logprobs: true,
            top_logprobs: Some(self.client.config().top_logprobs),
            seed: None,
        };
        let reply = self
            .client
            .chat(&[Message::user(Self::prompt(case, subset)?)], &options)?;
        Ok(gold_logprob(
            case,
            reply.logprobs.as_deref().unwrap_or_default(),
        ))
    }

    fn capabilities(&self) -> Capabilities {
        capabilities(&self.client)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::TopLogprob;

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("True."), Some(true));
        assert_eq!(
            parse_verdict("  false, the context says otherwise"),
            Some(false)
        );
        assert_eq!(parse_verdict("TRUE"), Some(true));
        assert_eq!(parse_verdict("Truely"), None);
        assert_eq!(parse_verdict("Yes"), None);
    }

    #[test]
    fn letters() {
        assert_eq!(letter_of(" B"), Some('B'));
        assert_eq!(letter_of("(C)"), Some('C'));
        assert_eq!(letter_of("Bo"), None);
        assert_eq!(letter_of("b"), None);
    }

    fn tok(token: &str, logprob: f64, top: &[(&str, f64)]) -> TokenLogprob {
        TokenLogprob {
            token: token.into(),
            logprob,
            top_logprobs: top
                .iter()
                .map(|&(t, l)| TopLogprob {
                    token: t.into(),
                    logprob: l,
                })
                .collect(),
        }
    }

    #[test]
    fn gold_logprob_reads_alternatives() {
        let case = sigrl::oracle::synthetic::generate_cases(1, &Default::default(), 0)
            .unwrap()
            .remove(0);
        let gold = case.gold_answer.letters().next().unwrap();
        let other = case
            .valid_letters()
            .into_iter()
            .find(|&c| c != gold)
            .unwrap();
        let g = gold.to_string();
        let o = other.to_string();
        let toks = vec![
            tok("Answer", -0.1, &[]),
            tok(&o, -0.2, &[(&o, -0.2), (&g, -1.7)]),
        ];
        assert_eq!(gold_logprob(&case, &toks), -1.7);
        let missing = vec![tok(&o, -0.01, &[(&o, -0.01)])];
        assert_eq!(gold_logprob(&case, &missing), LOGPROB_FLOOR);
        assert_eq!(gold_logprob(&case, &[]), LOGPROB_FLOOR);
    }
}
