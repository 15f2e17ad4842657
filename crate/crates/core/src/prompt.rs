//! Prompt templates with `{placeholder}` substitution, and parsing of doctor
//! replies into [`PolicyAction`]s.
//!
//! The bundled templates are plain text assets compiled into the crate. A
//! placeholder is `{` + identifier + `}`; any other brace is literal text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{ActionKind, PolicyAction, ANSWER_MARKER, ASK_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    DoctorSystem,
    Patient,
    Understanding,
    FactChecker,
    AnswerScorer,
    JudgePatient,
    AtomicFactDecomposition,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::DoctorSystem,
        TemplateId::Patient,
        TemplateId::Understanding,
        TemplateId::FactChecker,
        TemplateId::AnswerScorer,
        TemplateId::JudgePatient,
        TemplateId::AtomicFactDecomposition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::DoctorSystem => "doctor-system",
            TemplateId::Patient => "patient",
            TemplateId::Understanding => "understanding",
            TemplateId::FactChecker => "fact-checker",
            TemplateId::AnswerScorer => "answer-scorer",
            TemplateId::JudgePatient => "judge-patient",
            TemplateId::AtomicFactDecomposition => "atomic-fact-decomposition",
        }
    }

    fn bundled(self) -> &'static str {
        match self {
            TemplateId::DoctorSystem => include_str!("../assets/prompts/doctor-system.txt"),
            TemplateId::Patient => include_str!("../assets/prompts/patient.txt"),
            TemplateId::Understanding => include_str!("../assets/prompts/understanding.txt"),
            TemplateId::FactChecker => include_str!("../assets/prompts/fact-checker.txt"),
            TemplateId::AnswerScorer => include_str!("../assets/prompts/answer-scorer.txt"),
            TemplateId::JudgePatient => include_str!("../assets/prompts/judge-patient.txt"),
            TemplateId::AtomicFactDecomposition => {
                include_str!("../assets/prompts/atomic-fact-decomposition.txt")
            }
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: String,
    pieces: Vec<Piece>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PromptTemplate {
    pub fn parse(id: impl Into<String>, body: &str) -> Self {
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut rest = body;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    text.push_str(&rest[..open]);
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(after[..close].to_string()));
                    rest = &after[close + 1..];
                }
                _ => {
                    text.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        text.push_str(rest);
        if !text.is_empty() {
            pieces.push(Piece::Text(text));
        }
        PromptTemplate {
            id: id.into(),
            pieces,
        }
    }

    pub fn bundled(id: TemplateId) -> Self {
        Self::parse(id.name(), id.bundled())
    }

    /// Loads `<dir>/<id>.txt` when present, else the bundled body.
    pub fn load(id: TemplateId, dir: Option<&std::path::Path>) -> Result<Self> {
        if let Some(dir) = dir {
            let path = dir.join(format!("{}.txt", id.name()));
            if path.exists() {
                let body = std::fs::read_to_string(&path)
                    .map_err(|e| Error::from(e).context(path.display().to_string()))?;
                return Ok(Self::parse(id.name(), &body));
            }
        }
        Ok(Self::bundled(id))
    }

    /// Placeholder names in first-appearance order, deduplicated.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(name) if seen.insert(name.as_str()) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Substitutes every placeholder. Bindings with no matching placeholder
    /// are ignored; substituted values are inserted verbatim.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => match bindings.get(name.as_str()) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(Error::MissingBinding {
                            template: self.id.clone(),
                            placeholder: name.clone(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

/// Convenience: render a bundled template from `(name, value)` pairs.
pub fn render(id: TemplateId, bindings: &[(&str, &str)]) -> Result<String> {
    PromptTemplate::bundled(id).render(&bindings.iter().copied().collect())
}

/// A classified doctor reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub action: PolicyAction,
    /// The reply carried neither protocol marker.
    pub deviation: bool,
}

fn starts_with_ci(text: &str, prefix: &str) -> bool {
    text.len() >= prefix.len()
        && text.is_char_boundary(prefix.len())
        && text[..prefix.len()].eq_ignore_ascii_case(prefix)
}

/// Classifies a raw doctor reply. Replies without a leading marker count as
/// answers when they contain an `[answer:` tag and as questions otherwise;
/// both cases are flagged as deviations and get the marker prepended.
pub fn parse_doctor_reply(text: &str) -> Result<ParsedReply> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::OracleRetryable("empty doctor reply".into()));
    }
    if starts_with_ci(trimmed, ASK_MARKER) {
        let action = PolicyAction::from_text(ActionKind::Ask, trimmed.to_string());
        return Ok(ParsedReply {
            action,
            deviation: false,
        });
    }
    if starts_with_ci(trimmed, ANSWER_MARKER) {
        let action = PolicyAction::from_text(ActionKind::Answer, trimmed.to_string());
        return Ok(ParsedReply {
            action,
            deviation: false,
        });
    }
    tracing::warn!(reply = %trimmed, "doctor reply without protocol marker");
    let action = if trimmed.to_ascii_lowercase().contains("[answer:") {
        PolicyAction::from_text(ActionKind::Answer, format!("{ANSWER_MARKER} {trimmed}"))
    } else {
        PolicyAction::from_text(ActionKind::Ask, format!("{ASK_MARKER} {trimmed}"))
    };
    Ok(ParsedReply {
        action,
        deviation: true,
    })
}
