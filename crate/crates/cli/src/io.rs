//! Report and JSONL file helpers.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sigrl::model::{load_cases, PatientCase, Trajectory};
use sigrl::oracle::synthetic::generate_cases;
use sigrl::sig::TrajectoryScore;
use sigrl::{Error, Result};

use crate::config::{OracleMode, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Wraps every JSON report.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub command: String,
    #[serde(flatten)]
    pub body: T,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))?;
        }
    }
    Ok(())
}

pub fn write_report<T: Serialize>(path: &Path, command: &str, body: T) -> Result<()> {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        body,
    };
    write_text(path, &(serde_json::to_string_pretty(&env)? + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    ensure_parent(path)?;
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    fs::write(path, out).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::from(e).context(format!("{} line {}", path.display(), i + 1)))
        })
        .collect()
}

/// One persisted episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub case_id: String,
    /// Position within the case (group member or search rollout).
    pub index: usize,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<TrajectoryScore>,
}

/// The dataset, or generated cases in synthetic mode without one; filtered
/// by `config.cases` and sorted by case id.
pub fn load_dataset(config: &RunConfig) -> Result<Vec<PatientCase>> {
    let mut cases = match (&config.dataset, config.oracle) {
        (Some(path), _) => load_cases(path)?,
        (None, OracleMode::Synthetic) => generate_cases(
            config.synthetic.cases,
            &config.synthetic.params,
            config.seed.unwrap_or(0),
        )?,
        (None, OracleMode::Http) => return Err(Error::Config("http mode needs a dataset".into())),
    };
    let mut seen = BTreeSet::new();
    for c in &cases {
        if !seen.insert(c.case_id.as_str()) {
            return Err(Error::InvalidCase(format!(
                "duplicate case id {}",
                c.case_id
            )));
        }
    }
    if !config.cases.is_empty() {
        for id in &config.cases {
            if !seen.contains(id.as_str()) {
                return Err(Error::Config(format!("case {id} is not in the dataset")));
            }
        }
        cases.retain(|c| config.cases.contains(&c.case_id));
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(cases)
}
