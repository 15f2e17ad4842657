//! Deterministic stand-ins for the policy, patient, fact checker and scorer.
//!
//! The synthetic environment is closed: the patient answers `ASK(i, ...)`
//! questions with the texts of the named facts, the policy's understanding
//! lists a `[fact:i]` marker for every fact it has seen, and the checker looks
//! for those markers. Coverage therefore equals the revealed set exactly
//! (unless lossy memory is configured), so information-gain and SIG values
//! are known in closed form.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionRequest, AnswerScorer, FactChecker, Patient, Policy, PolicyAction};
use crate::error::{Error, Result};
use crate::hash::{mix_seed, StableHasher};
use crate::model::{AtomicFact, FactId, OptionSet, PartialQuestion, PatientCase, UNKNOWN_RESPONSE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueFamily {
    /// `v(S) = Σ_{i∈S} w_i + bonus`
    Additive,
    /// `v(S) = base + bonus·1(required ⊆ S) + Σ_{i∈S} w_i`
    Conjunctive,
    /// Additive plus a seeded per-subset jitter in `[-noise_scale, noise_scale]`.
    NoisyAdditive,
}

fn default_noise_scale() -> f64 {
    0.01
}

/// Closed-form value function standing in for answer log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticValueSpec {
    pub family: ValueFamily,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required: Vec<FactId>,
    #[serde(default)]
    pub bonus: f64,
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

impl SyntheticValueSpec {
    pub fn additive(weights: Vec<f64>, bonus: f64) -> Self {
        SyntheticValueSpec {
            family: ValueFamily::Additive,
            weights,
            required: Vec::new(),
            bonus,
            base: 0.0,
            noise_seed: 0,
            noise_scale: default_noise_scale(),
        }
    }

    pub fn conjunctive(weights: Vec<f64>, required: Vec<FactId>, bonus: f64, base: f64) -> Self {
        SyntheticValueSpec {
            family: ValueFamily::Conjunctive,
            weights,
            required,
            bonus,
            base,
            noise_seed: 0,
            noise_scale: default_noise_scale(),
        }
    }

    pub fn noisy_additive(
        weights: Vec<f64>,
        bonus: f64,
        noise_seed: u64,
        noise_scale: f64,
    ) -> Self {
        SyntheticValueSpec {
            family: ValueFamily::NoisyAdditive,
            weights,
            required: Vec::new(),
            bonus,
            base: 0.0,
            noise_seed,
            noise_scale,
        }
    }

    pub fn validate(&self, num_facts: usize) -> Result<()> {
        if self.weights.len() != num_facts {
            return Err(Error::InvalidInput(format!(
                "synthetic spec has {} weights for {num_facts} facts",
                self.weights.len()
            )));
        }
        if let Some(id) = self.required.iter().find(|&&id| id >= num_facts) {
            return Err(Error::InvalidInput(format!(
                "required fact {id} out of range"
            )));
        }
        let scalars = [self.bonus, self.base, self.noise_scale];
        if self.weights.iter().chain(&scalars).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "synthetic spec has non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Facts the synthetic policy must know to answer correctly: the
    /// conjunctive required set, or every fact when none is configured.
    pub fn knowledge_requirement(&self) -> Vec<FactId> {
        if self.required.is_empty() {
            (0..self.weights.len()).collect()
        } else {
            let mut r = self.required.clone();
            r.sort_unstable();
            r.dedup();
            r
        }
    }

    /// `v(S)` for a sorted, deduplicated subset.
    pub fn value(&self, subset: &[FactId]) -> f64 {
        let additive: f64 = subset.iter().map(|&i| self.weights[i]).sum();
        match self.family {
            ValueFamily::Additive => additive + self.bonus,
            ValueFamily::Conjunctive => {
                let present = self
                    .required
                    .iter()
                    .all(|r| subset.binary_search(r).is_ok());
                self.base + if present { self.bonus } else { 0.0 } + additive
            }
            ValueFamily::NoisyAdditive => {
                let mut h = StableHasher::new()
                    .u64(self.noise_seed)
                    .u64(subset.len() as u64);
                for &i in subset {
                    h = h.u64(i as u64);
                }
                let u = (h.finish() >> 11) as f64 / (1u64 << 53) as f64;
                additive + self.bonus + self.noise_scale * (2.0 * u - 1.0)
            }
        }
    }
}

/// Scorer backed by a [`SyntheticValueSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    spec: SyntheticValueSpec,
}

impl SyntheticScorer {
    pub fn new(spec: SyntheticValueSpec) -> Self {
        SyntheticScorer { spec }
    }

    /// Uses the case's own spec; falls back to additive uniform weights.
    pub fn for_case(case: &PatientCase) -> Self {
        let spec = case.synthetic.clone().unwrap_or_else(|| {
            let n = case.num_facts();
            SyntheticValueSpec::additive(vec![1.0 / n as f64; n], 0.0)
        });
        SyntheticScorer { spec }
    }

    pub fn spec(&self) -> &SyntheticValueSpec {
        &self.spec
    }
}

fn checked_value(spec: &SyntheticValueSpec, case: &PatientCase, subset: &[FactId]) -> Result<f64> {
    if spec.weights.len() != case.num_facts() {
        return Err(Error::InvalidInput(format!(
            "synthetic spec sized for {} facts, case {} has {}",
            spec.weights.len(),
            case.case_id,
            case.num_facts()
        )));
    }
    if let Some(&id) = subset.iter().find(|&&id| id >= case.num_facts()) {
        return Err(Error::InvalidInput(format!(
            "fact {id} not in case {}",
            case.case_id
        )));
    }
    Ok(spec.value(subset))
}

impl AnswerScorer for SyntheticScorer {
    fn answer_logprob(&self, case: &PatientCase, subset: &[FactId]) -> Result<f64> {
        checked_value(&self.spec, case, subset)
    }
}

/// Scorer that evaluates each case against its own embedded spec, so one
/// instance serves a whole synthetic dataset.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaseSpecScorer;

impl AnswerScorer for CaseSpecScorer {
    fn answer_logprob(&self, case: &PatientCase, subset: &[FactId]) -> Result<f64> {
        match &case.synthetic {
            Some(spec) => checked_value(spec, case, subset),
            None => Err(Error::CapabilityMissing(format!(
                "case {} has no synthetic value spec",
                case.case_id
            ))),
        }
    }
}

/// `[fact:i]`, the canonical token of fact `i` in synthetic understandings.
pub fn fact_marker(id: FactId) -> String {
    format!("[fact:{id}]")
}

/// Structured question micro-format.
pub fn ask_question(ids: &[FactId]) -> String {
    let list: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
    format!("ASK({})", list.join(","))
}

/// Fact ids named by every `ASK(...)` group in `question`; `None` when the
/// question does not use the structured form.
pub fn parse_ask_ids(question: &str) -> Option<Vec<FactId>> {
    let mut ids = Vec::new();
    let mut found = false;
    let mut rest = question;
    while let Some(pos) = rest.find("ASK(") {
        let after = &rest[pos + 4..];
        let Some(close) = after.find(')') else { break };
        found = true;
        ids.extend(
            after[..close]
                .split(',')
                .filter_map(|s| s.trim().parse::<FactId>().ok()),
        );
        rest = &after[close + 1..];
    }
    found.then_some(ids)
}

const STOPWORDS: &[&str] = &[
    "patient", "what", "when", "where", "which", "with", "have", "does", "your", "there", "about",
    "that", "this", "from", "been", "were", "will", "would", "could", "should", "tell", "they",
    "them", "their", "into", "more", "some", "than", "then", "also", "only", "very",
];

fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 4)
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Scripted patient: answers structured `ASK(i, ...)` questions exactly and
/// free-text questions by keyword overlap, else says it does not know.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticPatient;

impl Patient for SyntheticPatient {
    fn respond(&self, question: &str, facts: &[AtomicFact]) -> Result<String> {
        let selected: Vec<&AtomicFact> = match parse_ask_ids(question) {
            Some(ids) => {
                let ids: BTreeSet<FactId> = ids.into_iter().collect();
                facts.iter().filter(|f| ids.contains(&f.id)).collect()
            }
            None => {
                let qk = keywords(question);
                facts
                    .iter()
                    .filter(|f| !keywords(&f.text).is_disjoint(&qk))
                    .collect()
            }
        };
        if selected.is_empty() {
            Ok(UNKNOWN_RESPONSE.to_string())
        } else {
            Ok(selected
                .iter()
                .map(|f| f.text.as_str())
                .collect::<Vec<_>>()
                .join(" "))
        }
    }
}

/// Entailment = presence of the fact's canonical marker.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticChecker;

impl FactChecker for SyntheticChecker {
    fn entails(&self, understanding: &str, fact: &AtomicFact) -> Result<bool> {
        Ok(understanding.contains(&fact_marker(fact.id)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticBehavior {
    /// Ask for unknown facts, answer once nothing is left or when forced.
    #[default]
    Inquire,
    /// Answer the gold option immediately.
    AnswerGold,
    /// Answer a wrong option immediately.
    AnswerWrong,
}

fn default_answer_prob() -> f64 {
    0.15
}

fn default_true() -> bool {
    true
}

/// Scripted doctor policy.
///
/// At temperature 0 it asks for the lowest-id unknown fact. At positive
/// temperature it answers early with probability `answer_prob` and otherwise
/// asks for a uniformly drawn unknown fact. Its answer is the gold option iff
/// every fact of the case's knowledge requirement is known.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticPolicy {
    #[serde(default)]
    pub behavior: SyntheticBehavior,
    #[serde(default = "default_answer_prob")]
    pub answer_prob: f64,
    /// Facts the understanding "forgets" (enables negative coverage deltas).
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub lossy_memory: BTreeSet<FactId>,
    #[serde(default = "default_true")]
    pub emit_logprobs: bool,
}

impl Default for SyntheticPolicy {
    fn default() -> Self {
        SyntheticPolicy {
            behavior: SyntheticBehavior::Inquire,
            answer_prob: default_answer_prob(),
            lossy_memory: BTreeSet::new(),
            emit_logprobs: true,
        }
    }
}

impl SyntheticPolicy {
    pub fn with_behavior(behavior: SyntheticBehavior) -> Self {
        SyntheticPolicy {
            behavior,
            ..Default::default()
        }
    }

    /// Facts revealed by the partial question or quoted in any response.
    pub fn known_facts(
        case: &PatientCase,
        partial: &PartialQuestion,
        history: &[(String, String)],
    ) -> BTreeSet<FactId> {
        let mut known: BTreeSet<FactId> = partial.revealed_fact_ids.iter().copied().collect();
        for (_, response) in history {
            for f in &case.facts {
                if response.contains(f.text.as_str()) {
                    known.insert(f.id);
                }
            }
        }
        known
    }

    fn asked_facts(history: &[(String, String)]) -> BTreeSet<FactId> {
        history
            .iter()
            .filter_map(|(q, _)| parse_ask_ids(q))
            .flatten()
            .collect()
    }

    fn requirement(case: &PatientCase) -> Vec<FactId> {
        match &case.synthetic {
            Some(spec) => spec.knowledge_requirement(),
            None => (0..case.num_facts()).collect(),
        }
    }

    fn wrong_option(case: &PatientCase) -> OptionSet {
        let letter = case
            .options
            .keys()
            .copied()
            .find(|c| !case.gold_answer.contains(*c))
            .unwrap_or('Z');
        OptionSet::new([letter])
    }

    fn answer(&self, case: &PatientCase, known: &BTreeSet<FactId>, logprob: f64) -> PolicyAction {
        let correct = match self.behavior {
            SyntheticBehavior::AnswerGold => true,
            SyntheticBehavior::AnswerWrong => false,
            SyntheticBehavior::Inquire => {
                Self::requirement(case).iter().all(|id| known.contains(id))
            }
        };
        let options = if correct {
            case.gold_answer.clone()
        } else {
            Self::wrong_option(case)
        };
        let action = PolicyAction::answer("Based on the findings so far.", &options);
        self.finish(action, logprob)
    }

    fn finish(&self, action: PolicyAction, logprob: f64) -> PolicyAction {
        if self.emit_logprobs {
            action.with_sequence_logprob(logprob)
        } else {
            action
        }
    }
}

impl Policy for SyntheticPolicy {
    fn next_action(&self, req: &ActionRequest<'_>) -> Result<PolicyAction> {
        let known = Self::known_facts(req.case, req.partial, req.history);
        if self.behavior != SyntheticBehavior::Inquire {
            return Ok(self.answer(req.case, &known, 0.0));
        }
        let asked = Self::asked_facts(req.history);
        let unknown: Vec<FactId> = (0..req.case.num_facts())
            .filter(|id| !known.contains(id) && !asked.contains(id))
            .collect();
        if req.forced_answer || unknown.is_empty() {
            return Ok(self.answer(req.case, &known, 0.0));
        }
        if req.temperature <= 0.0 {
            let action = PolicyAction::ask(&ask_question(&unknown[..1]));
            return Ok(self.finish(action, 0.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(req.sample_seed, 0x5157));
        let p = self.answer_prob.clamp(0.0, 1.0);
        if rng.random::<f64>() < p {
            return Ok(self.answer(req.case, &known, p.ln()));
        }
        let pick = unknown[rng.random_range(0..unknown.len())];
        let logprob = (1.0 - p).ln() - (unknown.len() as f64).ln();
        Ok(self.finish(PolicyAction::ask(&ask_question(&[pick])), logprob))
    }

    fn understanding(
        &self,
        case: &PatientCase,
        partial: &PartialQuestion,
        history: &[(String, String)],
    ) -> Result<String> {
        let known = Self::known_facts(case, partial, history);
        let markers: Vec<String> = known
            .iter()
            .filter(|id| !self.lossy_memory.contains(id))
            .map(|&id| fact_marker(id))
            .collect();
        if markers.is_empty() {
            Ok("Known findings: none.".to_string())
        } else {
            Ok(format!("Known findings: {}", markers.join(" ")))
        }
    }
}

/// Shape of generated synthetic cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCaseParams {
    pub num_facts: usize,
    pub num_required: usize,
    /// Conjunctive bonus drawn uniformly from this range.
    pub bonus_range: (f64, f64),
    /// Per-fact weights drawn uniformly from this range.
    pub weight_range: (f64, f64),
    pub base: f64,
    /// When true, required facts are never fact 0 (the chief complaint).
    pub hide_required_from_first: bool,
}

impl Default for SyntheticCaseParams {
    fn default() -> Self {
        SyntheticCaseParams {
            num_facts: 6,
            num_required: 2,
            bonus_range: (0.5, 1.5),
            weight_range: (0.0, 0.2),
            base: -3.0,
            hide_required_from_first: true,
        }
    }
}

/// Generates `count` conjunctive synthetic cases, reproducibly from `seed`.
pub fn generate_cases(
    count: usize,
    params: &SyntheticCaseParams,
    seed: u64,
) -> Result<Vec<PatientCase>> {
    let n = params.num_facts;
    let lowest = usize::from(params.hide_required_from_first);
    if n == 0 || params.num_required + lowest > n {
        return Err(Error::Config(format!(
            "cannot place {} required facts among {n}",
            params.num_required
        )));
    }
    let letters = ['A', 'B', 'C', 'D', 'E'];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(count);
    for c in 0..count {
        let mut required: Vec<FactId> =
            rand::seq::index::sample(&mut rng, n - lowest, params.num_required)
                .into_iter()
                .map(|i| i + lowest)
                .collect();
        required.sort_unstable();
        let (wl, wh) = params.weight_range;
        let weights: Vec<f64> = (0..n)
            .map(|_| {
                if wh > wl {
                    rng.random_range(wl..wh)
                } else {
                    wl
                }
            })
            .collect();
        let (bl, bh) = params.bonus_range;
        let bonus = if bh > bl {
            rng.random_range(bl..bh)
        } else {
            bl
        };
        let gold = letters[rng.random_range(0..letters.len())];
        let facts = (0..n)
            .map(|id| AtomicFact {
                id,
                text: format!("Finding {id} of case {c} is present."),
                is_relevant: true,
            })
            .collect();
        let case = PatientCase {
            case_id: format!("syn-{c:04}"),
            question_type: "diagnosis".into(),
            atomic_question: "What is the most likely diagnosis?".into(),
            facts,
            options: letters
                .iter()
                .map(|&l| (l, format!("Condition {l}")))
                .collect(),
            gold_answer: OptionSet::new([gold]),
            partial_fact_ids: None,
            synthetic: Some(SyntheticValueSpec::conjunctive(
                weights,
                required,
                bonus,
                params.base,
            )),
        };
        case.validate()?;
        cases.push(case);
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::case_with;
    use crate::model::{build_partial_question, PartialStrategy};
    use crate::oracle::ActionKind;

    #[test]
    fn additive_values() {
        let spec = SyntheticValueSpec::additive(vec![0.1, 0.2, 0.3], 0.0);
        assert!((spec.value(&[0, 2]) - 0.4).abs() < 1e-15);
        let spec = SyntheticValueSpec::additive(vec![5.0, 7.0], -3.0);
        assert_eq!(spec.value(&[]), -3.0);
    }

    #[test]
    fn conjunctive_values() {
        let spec = SyntheticValueSpec::conjunctive(vec![0.0; 3], vec![0, 1], 5.0, -10.0);
        assert_eq!(spec.value(&[0]), -10.0);
        assert_eq!(spec.value(&[0, 1]), -5.0);
    }

    #[test]
    fn noisy_values_are_pure() {
        let spec = SyntheticValueSpec::noisy_additive(vec![0.1, 0.2], 0.0, 7, 0.05);
        let a = spec.value(&[1]);
        assert_eq!(a.to_bits(), spec.value(&[1]).to_bits());
        assert!((a - 0.2).abs() <= 0.05);
    }

    #[test]
    fn patient_answers_structured_and_free_text() {
        let case = case_with(5);
        let p = SyntheticPatient;
        assert_eq!(p.respond("ASK(3)", &case.facts).unwrap(), "Fact number 3.");
        assert_eq!(p.respond("ASK(99)", &case.facts).unwrap(), UNKNOWN_RESPONSE);
        assert_eq!(
            p.respond("Any allergies?", &case.facts).unwrap(),
            UNKNOWN_RESPONSE
        );

        let mut case = case_with(2);
        case.facts[1].text = "Physical examination reveals pitting of his nails.".into();
        assert_eq!(
            p.respond("Are there any nail changes such as pitting?", &case.facts)
                .unwrap(),
            case.facts[1].text
        );
    }

    #[test]
    fn parse_ask_ids_handles_lists() {
        assert_eq!(parse_ask_ids("question: ASK(1, 3)"), Some(vec![1, 3]));
        assert_eq!(parse_ask_ids("no structure"), None);
    }

    #[test]
    fn checker_uses_markers() {
        let case = case_with(11);
        let c = SyntheticChecker;
        assert!(c
            .entails("Known findings: [fact:3]", &case.facts[3])
            .unwrap());
        assert!(!c.entails("", &case.facts[3]).unwrap());
        // [fact:1] must not match [fact:10].
        assert!(!c.entails("[fact:10]", &case.facts[1]).unwrap());
    }

    fn request<'a>(
        case: &'a PatientCase,
        partial: &'a PartialQuestion,
        history: &'a [(String, String)],
        forced: bool,
    ) -> ActionRequest<'a> {
        ActionRequest {
            case,
            partial,
            history,
            forced_answer: forced,
            temperature: 0.0,
            sample_seed: 0,
        }
    }

    #[test]
    fn greedy_policy_asks_lowest_unknown_then_answers() {
        let mut case = case_with(3);
        case.gold_answer = OptionSet::new(['B']);
        let partial = build_partial_question(&case, PartialStrategy::FirstFact, 0).unwrap();
        let policy = SyntheticPolicy::default();

        let a = policy
            .next_action(&request(&case, &partial, &[], false))
            .unwrap();
        assert_eq!(a.kind, ActionKind::Ask);
        assert_eq!(a.body(), "ASK(1)");

        let history = vec![
            ("question: ASK(1)".to_string(), "Fact number 1.".to_string()),
            ("question: ASK(2)".to_string(), "Fact number 2.".to_string()),
        ];
        let a = policy
            .next_action(&request(&case, &partial, &history, false))
            .unwrap();
        assert_eq!(a.kind, ActionKind::Answer);
        assert!(a.text.ends_with("[answer: B]"));
    }

    #[test]
    fn forced_answer_flag_wins() {
        let case = case_with(4);
        let partial = build_partial_question(&case, PartialStrategy::FirstFact, 0).unwrap();
        let a = SyntheticPolicy::default()
            .next_action(&request(&case, &partial, &[], true))
            .unwrap();
        assert_eq!(a.kind, ActionKind::Answer);
        // Facts 1..3 unknown, so the answer is wrong.
        assert!(!a.text.ends_with("[answer: D]"));
    }

    #[test]
    fn understanding_lists_known_markers() {
        let case = case_with(4);
        let partial = PartialQuestion::from_ids(&case, &[0, 2]).unwrap();
        let policy = SyntheticPolicy::default();
        let u = policy.understanding(&case, &partial, &[]).unwrap();
        assert_eq!(u, "Known findings: [fact:0] [fact:2]");

        let lossy = SyntheticPolicy {
            lossy_memory: [2].into(),
            ..Default::default()
        };
        let u = lossy.understanding(&case, &partial, &[]).unwrap();
        assert_eq!(u, "Known findings: [fact:0]");
    }

    #[test]
    fn stochastic_policy_is_seed_deterministic() {
        let case = case_with(6);
        let partial = build_partial_question(&case, PartialStrategy::FirstFact, 0).unwrap();
        let policy = SyntheticPolicy::default();
        let mut req = request(&case, &partial, &[], false);
        req.temperature = 1.0;
        let draws: Vec<_> = (0..20)
            .map(|s| {
                req.sample_seed = s;
                policy.next_action(&req).unwrap().text
            })
            .collect();
        let again: Vec<_> = (0..20)
            .map(|s| {
                req.sample_seed = s;
                policy.next_action(&req).unwrap().text
            })
            .collect();
        assert_eq!(draws, again);
        let distinct: BTreeSet<_> = draws.iter().collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn generated_cases_validate() {
        let cases = generate_cases(10, &SyntheticCaseParams::default(), 3).unwrap();
        assert_eq!(cases.len(), 10);
        for c in &cases {
            let spec = c.synthetic.as_ref().unwrap();
            assert_eq!(spec.required.len(), 2);
            assert!(!spec.required.contains(&0));
        }
        assert_eq!(
            cases,
            generate_cases(10, &SyntheticCaseParams::default(), 3).unwrap()
        );
    }
}
