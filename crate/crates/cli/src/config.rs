//! Run configuration: one TOML (or JSON) file with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigrl::eval::EvalConfig;
use sigrl::grpo::{DistParams, ObjectiveConfig, Pooling};
use sigrl::mcts::McstConfig;
use sigrl::model::PartialStrategy;
use sigrl::noise::NoiseBenchConfig;
use sigrl::oracle::synthetic::{SyntheticCaseParams, SyntheticPolicy};
use sigrl::shapley::ShapleySettings;
use sigrl::sig::SigParams;
use sigrl::{Error, Result};
use sigrl_http::Endpoints;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    #[default]
    Synthetic,
    Http,
}

/// Generated dataset used in synthetic mode when no dataset path is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSection {
    pub cases: usize,
    pub params: SyntheticCaseParams,
    pub policy: SyntheticPolicy,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            cases: 100,
            params: SyntheticCaseParams::default(),
            policy: SyntheticPolicy::default(),
        }
    }
}

/// Group rollouts for the policy-optimization pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupSection {
    pub size: usize,
    pub depth_limit: usize,
    pub temperature: f64,
    pub pooling: Pooling,
}

impl Default for GroupSection {
    fn default() -> Self {
        GroupSection {
            size: 8,
            depth_limit: 10,
            temperature: 1.0,
            pooling: Pooling::Masked,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub oracle: OracleMode,
    /// Overrides every module seed when set.
    pub seed: Option<u64>,
    /// Case-level worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Restricts runs to these case ids.
    pub cases: Vec<String>,
    /// How the initial partial question is built for cases without
    /// explicit `partial_fact_ids`.
    pub partial: PartialStrategy,
    pub shapley: ShapleySettings,
    pub mcts: McstConfig,
    pub sig: SigParams,
    pub dist: DistParams,
    pub objective: ObjectiveConfig,
    pub group: GroupSection,
    pub eval: EvalConfig,
    pub noise: NoiseBenchConfig,
    pub synthetic: SyntheticSection,
    pub endpoints: Endpoints,
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Pushes the master seed and partial strategy into the module sections.
    pub fn finalize(&mut self) {
        self.eval.partial = self.partial;
        if let Some(seed) = self.seed {
            self.shapley.monte_carlo.seed = seed;
            self.mcts.seed = seed;
            self.eval.seed = seed;
            self.noise.seed = seed;
            self.noise.monte_carlo.seed = seed;
        }
    }

    /// Validation failures are reported as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if let Some(p) = &self.dataset {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "dataset {} does not exist",
                    p.display()
                )));
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.shapley.monte_carlo.validate().map_err(as_config)?;
        self.mcts.validate().map_err(as_config)?;
        self.sig.validate().map_err(as_config)?;
        self.dist.validate().map_err(as_config)?;
        if !(self.objective.clip_eps > 0.0 && self.objective.clip_eps < 1.0) {
            return Err(Error::Config(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.objective.clip_eps
            )));
        }
        if self.group.size < 2 {
            return Err(Error::Config(format!(
                "group size must be at least 2, got {}",
                self.group.size
            )));
        }
        if self.oracle == OracleMode::Http {
            self.endpoints.validate().map_err(as_config)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
