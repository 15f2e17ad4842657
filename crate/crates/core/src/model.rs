//! Domain types: patient cases, partial questions, dialogue trajectories and
//! the exact-match answer metric.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{hash_str, mix_seed};
use crate::oracle::synthetic::SyntheticValueSpec;
use crate::oracle::{ActionKind, PolicyAction};

pub type FactId = usize;

/// Marker the patient oracles return when no fact answers a question.
pub const UNKNOWN_RESPONSE: &str = "I don't know";

/// A minimal, self-contained unit of patient information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub id: FactId,
    pub text: String,
    /// Only the noise-injection harness sets this to `false`.
    #[serde(default = "default_true")]
    pub is_relevant: bool,
}

fn default_true() -> bool {
    true
}

/// A sorted, deduplicated set of uppercase option letters.
///
/// Serialized as a plain string (`"CD"`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OptionSet(BTreeSet<char>);

impl OptionSet {
    pub fn new<I: IntoIterator<Item = char>>(letters: I) -> Self {
        OptionSet(letters.into_iter().collect())
    }

    /// Parses a gold answer string such as `"D"` or `"CD"`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = BTreeSet::new();
        for c in s.chars() {
            if c.is_ascii_uppercase() {
                set.insert(c);
            } else if !(c.is_whitespace() || c == ',') {
                return Err(Error::InvalidInput(format!(
                    "option letters must be uppercase ASCII, got {s:?}"
                )));
            }
        }
        Ok(OptionSet(set))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn letters(&self) -> impl Iterator<Item = char> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.0.contains(&c)
    }

    pub fn is_subset(&self, other: &BTreeSet<char>) -> bool {
        self.0.is_subset(other)
    }

    /// `[answer: XXX]`, the closing marker of the doctor answer format.
    pub fn answer_marker(&self) -> String {
        format!("[answer: {self}]")
    }
}

impl fmt::Display for OptionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl Serialize for OptionSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for OptionSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        OptionSet::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// The unit of the environment: atomic question, ordered atomic facts,
/// options and gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientCase {
    pub case_id: String,
    pub question_type: String,
    pub atomic_question: String,
    pub facts: Vec<AtomicFact>,
    pub options: BTreeMap<char, String>,
    pub gold_answer: OptionSet,
    /// Pre-selected partial information, when the dataset carries it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_fact_ids: Option<Vec<FactId>>,
    /// Value function used by synthetic oracles for this case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticValueSpec>,
}

impl PatientCase {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCase(format!("{}: {msg}", self.case_id)));
        if self.facts.is_empty() {
            return bad("case has no atomic facts".into());
        }
        for (i, f) in self.facts.iter().enumerate() {
            if f.id != i {
                return bad(format!(
                    "fact ids must be contiguous from 0, found {} at {i}",
                    f.id
                ));
            }
            if f.text.trim().is_empty() {
                return bad(format!("fact {i} has empty text"));
            }
        }
        if self.options.is_empty() {
            return bad("case has no options".into());
        }
        if let Some(c) = self.options.keys().find(|c| !c.is_ascii_uppercase()) {
            return bad(format!(
                "option letter {c:?} is not an uppercase ASCII letter"
            ));
        }
        if self.gold_answer.is_empty() {
            return bad("gold answer is empty".into());
        }
        if let Some(c) = self
            .gold_answer
            .letters()
            .find(|c| !self.options.contains_key(c))
        {
            return bad(format!("gold letter {c} is not among the options"));
        }
        if let Some(ids) = &self.partial_fact_ids {
            if let Some(id) = ids.iter().find(|&&id| id >= self.facts.len()) {
                return bad(format!("partial fact id {id} out of range"));
            }
        }
        if let Some(spec) = &self.synthetic {
            spec.validate(self.facts.len())
                .map_err(|e| e.context(format!("case {}", self.case_id)))?;
        }
        Ok(())
    }

    pub fn num_facts(&self) -> usize {
        self.facts.len()
    }

    pub fn valid_letters(&self) -> BTreeSet<char> {
        self.options.keys().copied().collect()
    }

    /// `A: text\nB: text ...`
    pub fn option_str(&self) -> String {
        self.options
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn relevant_mask(&self) -> Vec<bool> {
        self.facts.iter().map(|f| f.is_relevant).collect()
    }
}

/// One line of the case JSONL ingestion format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub question: String,
    pub options: BTreeMap<String, String>,
    pub answer: String,
    pub atomic_facts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_fact_ids: Option<Vec<FactId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub irrelevant_fact_ids: Vec<FactId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticValueSpec>,
}

impl TryFrom<CaseRecord> for PatientCase {
    type Error = Error;

    fn try_from(r: CaseRecord) -> Result<Self> {
        let mut options = BTreeMap::new();
        for (k, v) in r.options {
            let mut chars = k.trim().chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => {
                    options.insert(c, v);
                }
                _ => {
                    return Err(Error::InvalidCase(format!(
                        "{}: option key {k:?} is not a single letter",
                        r.case_id
                    )))
                }
            }
        }
        let irrelevant: BTreeSet<_> = r.irrelevant_fact_ids.into_iter().collect();
        let facts = r
            .atomic_facts
            .into_iter()
            .enumerate()
            .map(|(id, text)| AtomicFact {
                id,
                text,
                is_relevant: !irrelevant.contains(&id),
            })
            .collect();
        let case = PatientCase {
            case_id: r.case_id,
            question_type: r
                .question_type
                .unwrap_or_else(|| "multiple-choice".to_string()),
            atomic_question: r.question,
            facts,
            options,
            gold_answer: OptionSet::parse(&r.answer)?,
            partial_fact_ids: r.partial_fact_ids,
            synthetic: r.synthetic,
        };
        case.validate()?;
        Ok(case)
    }
}

impl From<&PatientCase> for CaseRecord {
    fn from(c: &PatientCase) -> Self {
        CaseRecord {
            case_id: c.case_id.clone(),
            question: c.atomic_question.clone(),
            options: c
                .options
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            answer: c.gold_answer.to_string(),
            atomic_facts: c.facts.iter().map(|f| f.text.clone()).collect(),
            partial_fact_ids: c.partial_fact_ids.clone(),
            question_type: Some(c.question_type.clone()),
            irrelevant_fact_ids: c
                .facts
                .iter()
                .filter(|f| !f.is_relevant)
                .map(|f| f.id)
                .collect(),
            synthetic: c.synthetic.clone(),
        }
    }
}

/// Parses case JSONL text. Blank lines are skipped; unknown fields ignored.
pub fn parse_cases(text: &str) -> Result<Vec<PatientCase>> {
    let mut cases = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CaseRecord = serde_json::from_str(line)
            .map_err(|e| Error::from(e).context(format!("line {}", lineno + 1)))?;
        cases.push(
            PatientCase::try_from(record).map_err(|e| e.context(format!("line {}", lineno + 1)))?,
        );
    }
    Ok(cases)
}

pub fn load_cases(path: &std::path::Path) -> Result<Vec<PatientCase>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    parse_cases(&text)
}

pub fn cases_to_jsonl(cases: &[PatientCase]) -> Result<String> {
    let mut out = String::new();
    for c in cases {
        out.push_str(&serde_json::to_string(&CaseRecord::from(c))?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialStrategy {
    /// Reveal only fact 0 (the chief complaint).
    #[default]
    FirstFact,
    /// Reveal ⌊|F|/2⌋ facts sampled without replacement.
    RandomHalf,
}

/// The model input: atomic question plus the revealed subset of facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialQuestion {
    pub case_id: String,
    pub revealed_fact_ids: Vec<FactId>,
    pub rendered_text: String,
}

impl PartialQuestion {
    pub fn from_ids(case: &PatientCase, ids: &[FactId]) -> Result<Self> {
        let revealed: BTreeSet<FactId> = ids.iter().copied().collect();
        if let Some(id) = revealed.iter().find(|&&id| id >= case.num_facts()) {
            return Err(Error::InvalidInput(format!(
                "revealed fact {id} not in case {}",
                case.case_id
            )));
        }
        let mut parts: Vec<&str> = revealed
            .iter()
            .map(|&id| case.facts[id].text.as_str())
            .collect();
        parts.push(&case.atomic_question);
        Ok(PartialQuestion {
            case_id: case.case_id.clone(),
            revealed_fact_ids: revealed.into_iter().collect(),
            rendered_text: parts.join(" "),
        })
    }

    pub fn reveals(&self, id: FactId) -> bool {
        self.revealed_fact_ids.binary_search(&id).is_ok()
    }
}

pub fn build_partial_question(
    case: &PatientCase,
    strategy: PartialStrategy,
    seed: u64,
) -> Result<PartialQuestion> {
    let n = case.num_facts();
    if n == 0 {
        return Err(Error::InvalidCase(format!(
            "{}: case has no atomic facts",
            case.case_id
        )));
    }
    match strategy {
        PartialStrategy::FirstFact => PartialQuestion::from_ids(case, &[0]),
        PartialStrategy::RandomHalf => {
            if n < 2 {
                return Err(Error::InvalidCase(format!(
                    "{}: random-half needs at least 2 facts",
                    case.case_id
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, hash_str(&case.case_id)));
            let ids = rand::seq::index::sample(&mut rng, n, n / 2).into_vec();
            PartialQuestion::from_ids(case, &ids)
        }
    }
}

/// Uses the dataset's `partial_fact_ids` when present, else `strategy`.
pub fn partial_for_case(
    case: &PatientCase,
    strategy: PartialStrategy,
    seed: u64,
) -> Result<PartialQuestion> {
    match &case.partial_fact_ids {
        Some(ids) => PartialQuestion::from_ids(case, ids),
        None => build_partial_question(case, strategy, seed),
    }
}

/// Parses the selected options out of a final answer.
///
/// The trailing `[answer: XXX]` marker wins; otherwise the last standalone
/// run of valid letters in the text is used. Never fails: unparsable answers
/// yield the empty set.
pub fn extract_options(answer_text: &str, valid_letters: &BTreeSet<char>) -> OptionSet {
    let lower = answer_text.to_ascii_lowercase();
    if let Some(start) = lower.rfind("[answer:") {
        let body_start = start + "[answer:".len();
        let body_end = lower[body_start..]
            .find(']')
            .map(|i| body_start + i)
            .unwrap_or(answer_text.len());
        let letters: BTreeSet<char> = answer_text[body_start..body_end]
            .chars()
            .filter(|c| valid_letters.contains(c))
            .collect();
        if !letters.is_empty() {
            return OptionSet(letters);
        }
    }
    answer_text
        .split(|c: char| !c.is_ascii_alphabetic())
        .rfind(|w| !w.is_empty() && w.chars().all(|c| valid_letters.contains(&c)))
        .map(|w| OptionSet::new(w.chars()))
        .unwrap_or_default()
}

pub fn exact_match(predicted: &OptionSet, gold: &OptionSet) -> bool {
    !predicted.is_empty() && predicted == gold
}

/// Per-fact entailment bits of one understanding state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactCoverage(pub Vec<bool>);

impl FactCoverage {
    pub fn empty(n: usize) -> Self {
        FactCoverage(vec![false; n])
    }

    pub fn from_ids(n: usize, ids: impl IntoIterator<Item = FactId>) -> Self {
        let mut bits = vec![false; n];
        for id in ids {
            bits[id] = true;
        }
        FactCoverage(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn covered_ids(&self) -> Vec<FactId> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Elementwise `curr − prev` of the indicator vectors.
pub fn coverage_delta(prev: &FactCoverage, curr: &FactCoverage) -> Result<Vec<i8>> {
    if prev.len() != curr.len() {
        return Err(Error::InvariantViolation(format!(
            "coverage lengths differ: {} vs {}",
            prev.len(),
            curr.len()
        )));
    }
    Ok(prev
        .0
        .iter()
        .zip(&curr.0)
        .map(|(&p, &c)| i8::from(c) - i8::from(p))
        .collect())
}

/// Whitespace tokenization; the granularity used by the synthetic environment.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOrigin {
    Prompt,
    Question,
    PatientResponse,
    Answer,
}

impl TokenOrigin {
    /// Model-generated tokens, the ones that receive supervision and reward.
    pub fn is_generated(self) -> bool {
        matches!(self, TokenOrigin::Question | TokenOrigin::Answer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub origin: TokenOrigin,
}

/// Half-open token-index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn range(self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub question_text: String,
    pub response_text: String,
    pub question_token_span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sig_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_after: Option<FactCoverage>,
    /// Articulated understanding after this turn, kept for offline re-scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub understanding_after: Option<String>,
}

/// A complete interaction: partial question, ask/response turns, final answer,
/// and the origin-tagged token stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub case_id: String,
    pub partial: PartialQuestion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_understanding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_coverage: Option<FactCoverage>,
    pub turns: Vec<DialogueTurn>,
    pub final_answer_text: String,
    pub answer_token_span: Span,
    pub predicted_options: OptionSet,
    pub tokens: Vec<Token>,
    /// Behaviour-policy log-probs aligned with `tokens`; zero on
    /// non-generated tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn num_questions(&self) -> usize {
        self.turns.len()
    }

    /// Supervision mask: true exactly on question and answer tokens.
    pub fn mask(&self) -> Vec<bool> {
        self.tokens
            .iter()
            .map(|t| t.origin.is_generated())
            .collect()
    }

    pub fn is_correct(&self, case: &PatientCase) -> bool {
        exact_match(&self.predicted_options, &case.gold_answer)
    }

    /// Checks the span/tag partition and answer-derivation invariants.
    pub fn validate(&self, valid_letters: &BTreeSet<char>) -> Result<()> {
        let n = self.tokens.len();
        let mut owner = vec![false; n];
        let spans = self
            .turns
            .iter()
            .map(|t| (t.question_token_span, TokenOrigin::Question))
            .chain(std::iter::once((
                self.answer_token_span,
                TokenOrigin::Answer,
            )));
        for (span, origin) in spans {
            if span.is_empty() || span.end > n {
                return Err(Error::InvariantViolation(format!(
                    "span {}..{} is empty or out of bounds (tokens: {n})",
                    span.start, span.end
                )));
            }
            for i in span.range() {
                if owner[i] {
                    return Err(Error::InvariantViolation(format!(
                        "token {i} is in two spans"
                    )));
                }
                if self.tokens[i].origin != origin {
                    return Err(Error::InvariantViolation(format!(
                        "token {i} tagged {:?} inside a {origin:?} span",
                        self.tokens[i].origin
                    )));
                }
                owner[i] = true;
            }
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.origin.is_generated() != owner[i] {
                return Err(Error::InvariantViolation(format!(
                    "token {i} tagged {:?} but span membership is {}",
                    tok.origin, owner[i]
                )));
            }
        }
        if let Some(lp) = &self.logprobs {
            if lp.len() != n {
                return Err(Error::InvariantViolation(format!(
                    "{} log-probs for {n} tokens",
                    lp.len()
                )));
            }
        }
        let derived = extract_options(&self.final_answer_text, valid_letters);
        if derived != self.predicted_options {
            return Err(Error::InvariantViolation(format!(
                "predicted options {} not derivable from the answer text ({derived})",
                self.predicted_options
            )));
        }
        Ok(())
    }

    /// The ask/response history as (question, response) pairs.
    pub fn history(&self) -> Vec<(String, String)> {
        self.turns
            .iter()
            .map(|t| (t.question_text.clone(), t.response_text.clone()))
            .collect()
    }
}

/// Incrementally assembles a [`Trajectory`] and its token stream.
#[derive(Debug, Clone)]
pub struct TrajectoryBuilder {
    partial: PartialQuestion,
    tokens: Vec<Token>,
    logprobs: Vec<f64>,
    has_logprobs: bool,
    turns: Vec<DialogueTurn>,
    initial_understanding: Option<String>,
}

impl TrajectoryBuilder {
    /// Starts a stream whose leading tokens are the rendered prompt context.
    pub fn new(partial: PartialQuestion, prompt_text: &str) -> Self {
        let tokens: Vec<Token> = tokenize(prompt_text)
            .into_iter()
            .map(|text| Token {
                text,
                origin: TokenOrigin::Prompt,
            })
            .collect();
        let logprobs = vec![0.0; tokens.len()];
        TrajectoryBuilder {
            partial,
            tokens,
            logprobs,
            has_logprobs: true,
            turns: Vec::new(),
            initial_understanding: None,
        }
    }

    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    pub fn turns(&self) -> &[DialogueTurn] {
        &self.turns
    }

    pub fn set_initial_understanding(&mut self, text: Option<String>) {
        self.initial_understanding = text;
    }

    fn push_generated(&mut self, action: &PolicyAction, origin: TokenOrigin) -> Result<Span> {
        if action.tokens.is_empty() {
            return Err(Error::InvariantViolation(
                "generated action has no tokens".into(),
            ));
        }
        let start = self.tokens.len();
        for t in &action.tokens {
            self.tokens.push(Token {
                text: t.clone(),
                origin,
            });
        }
        match &action.per_token_logprob {
            Some(lp) if lp.len() == action.tokens.len() => self.logprobs.extend(lp),
            _ => {
                self.has_logprobs = false;
                self.logprobs
                    .extend(std::iter::repeat_n(0.0, action.tokens.len()));
            }
        }
        Ok(Span {
            start,
            end: self.tokens.len(),
        })
    }

    pub fn push_turn(
        &mut self,
        question: &PolicyAction,
        response: &str,
        understanding_after: Option<String>,
    ) -> Result<()> {
        if question.kind != ActionKind::Ask {
            return Err(Error::InvalidInput(
                "push_turn expects an ask action".into(),
            ));
        }
        let span = self.push_generated(question, TokenOrigin::Question)?;
        for text in tokenize(response) {
            self.tokens.push(Token {
                text,
                origin: TokenOrigin::PatientResponse,
            });
            self.logprobs.push(0.0);
        }
        self.turns.push(DialogueTurn {
            question_text: question.text.clone(),
            response_text: response.to_string(),
            question_token_span: span,
            sig_score: None,
            coverage_after: None,
            understanding_after,
        });
        Ok(())
    }

    pub fn finish(
        mut self,
        answer: &PolicyAction,
        valid_letters: &BTreeSet<char>,
    ) -> Result<Trajectory> {
        if answer.kind != ActionKind::Answer {
            return Err(Error::InvalidInput(
                "finish expects an answer action".into(),
            ));
        }
        let span = self.push_generated(answer, TokenOrigin::Answer)?;
        let traj = Trajectory {
            case_id: self.partial.case_id.clone(),
            partial: self.partial,
            initial_understanding: self.initial_understanding,
            initial_coverage: None,
            turns: self.turns,
            final_answer_text: answer.text.clone(),
            answer_token_span: span,
            predicted_options: extract_options(&answer.text, valid_letters),
            tokens: self.tokens,
            logprobs: self.has_logprobs.then_some(self.logprobs),
        };
        traj.validate(valid_letters)?;
        Ok(traj)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn letters(s: &str) -> BTreeSet<char> {
        s.chars().collect()
    }

    pub(crate) fn case_with(n: usize) -> PatientCase {
        PatientCase {
            case_id: format!("case-{n}"),
            question_type: "diagnosis".into(),
            atomic_question: "What is the most likely diagnosis?".into(),
            facts: (0..n)
                .map(|id| AtomicFact {
                    id,
                    text: format!("Fact number {id}."),
                    is_relevant: true,
                })
                .collect(),
            options: [('A', "a"), ('B', "b"), ('C', "c"), ('D', "d"), ('E', "e")]
                .into_iter()
                .map(|(k, v)| (k, v.to_string()))
                .collect(),
            gold_answer: OptionSet::parse("D").unwrap(),
            partial_fact_ids: None,
            synthetic: None,
        }
    }

    #[test]
    fn first_fact_reveals_fact_zero() {
        let p = build_partial_question(&case_with(10), PartialStrategy::FirstFact, 1).unwrap();
        assert_eq!(p.revealed_fact_ids, vec![0]);
        assert_eq!(
            p.rendered_text,
            "Fact number 0. What is the most likely diagnosis?"
        );
    }

    #[test]
    fn random_half_is_floor_and_deterministic() {
        let case = case_with(9);
        let a = build_partial_question(&case, PartialStrategy::RandomHalf, 42).unwrap();
        let b = build_partial_question(&case, PartialStrategy::RandomHalf, 42).unwrap();
        assert_eq!(a.revealed_fact_ids.len(), 4);
        assert_eq!(a, b);
        assert!(a.revealed_fact_ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn random_half_needs_two_facts() {
        let err =
            build_partial_question(&case_with(1), PartialStrategy::RandomHalf, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidCase(_)));
    }

    #[test]
    fn empty_case_is_rejected() {
        let mut case = case_with(1);
        case.facts.clear();
        assert!(matches!(
            build_partial_question(&case, PartialStrategy::FirstFact, 0),
            Err(Error::InvalidCase(_))
        ));
        assert!(case.validate().is_err());
    }

    #[test]
    fn extract_options_marker_and_fallback() {
        let v = letters("ABCDE");
        assert_eq!(
            extract_options("…The answer is [answer: D]", &v),
            OptionSet::new(['D'])
        );
        assert_eq!(
            extract_options("[answer: CD]", &v),
            OptionSet::new(['C', 'D'])
        );
        assert_eq!(
            extract_options("[answer: A, C]", &v),
            OptionSet::new(['A', 'C'])
        );
        assert!(extract_options("no option given", &v).is_empty());
        assert_eq!(
            extract_options("I pick B over C. Final: E", &v),
            OptionSet::new(['E'])
        );
        // Letters outside the valid set are ignored inside the marker.
        assert_eq!(extract_options("[answer: DZ]", &v), OptionSet::new(['D']));
    }

    #[test]
    fn exact_match_is_set_equality() {
        let d = OptionSet::new(['D']);
        assert!(exact_match(&d, &d));
        assert!(!exact_match(
            &OptionSet::new(['C']),
            &OptionSet::new(['C', 'D'])
        ));
        assert!(!exact_match(&OptionSet::default(), &OptionSet::new(['A'])));
    }

    #[test]
    fn coverage_delta_cases() {
        let c = |v: &[u8]| FactCoverage(v.iter().map(|&b| b == 1).collect());
        assert_eq!(
            coverage_delta(&c(&[1, 0, 0]), &c(&[1, 1, 0])).unwrap(),
            vec![0, 1, 0]
        );
        assert_eq!(
            coverage_delta(&c(&[1, 0, 1]), &c(&[1, 0, 1])).unwrap(),
            vec![0, 0, 0]
        );
        assert_eq!(
            coverage_delta(&c(&[0, 1]), &c(&[1, 0])).unwrap(),
            vec![1, -1]
        );
        assert!(matches!(
            coverage_delta(&c(&[0, 1]), &c(&[1])),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn jsonl_ingestion_ignores_unknown_fields() {
        let line = r#"{"case_id":"x1","question":"Which drug?","options":{"A":"a","B":"b"},"answer":"B","atomic_facts":["Male.","70 years old."],"extra":123}"#;
        let cases = parse_cases(line).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].facts[1].text, "70 years old.");
        assert_eq!(cases[0].gold_answer, OptionSet::new(['B']));
        assert!(cases[0].partial_fact_ids.is_none());
    }

    #[test]
    fn jsonl_rejects_gold_outside_options() {
        let line = r#"{"case_id":"x1","question":"Q?","options":{"A":"a"},"answer":"C","atomic_facts":["f"]}"#;
        let err = parse_cases(line).unwrap_err();
        assert!(matches!(err.root(), Error::InvalidCase(_)), "{err}");
    }

    #[test]
    fn option_set_serializes_as_string() {
        let s = OptionSet::new(['D', 'C', 'D']);
        assert_eq!(serde_json::to_string(&s).unwrap(), "\"CD\"");
        let back: OptionSet = serde_json::from_str("\"CD\"").unwrap();
        assert_eq!(back, s);
    }
}
