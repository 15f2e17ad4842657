//! SIG-guided Monte Carlo tree search over dialogues, best-trajectory
//! retention and supervised-fine-tuning export.
//!
//! The root holds the partial question. Every other node is either an ask
//! (question plus patient response) or a terminal answer. One iteration
//! selects by UCT down to a node that is not fully expanded, expands one new
//! child from a policy sample, rolls out to an answer, scores the finished
//! trajectory and adds its reward to every node on the selected path.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{doctor_prompt, next_action, rollout_from, EpisodeConfig, Oracles};
use crate::error::{Error, Result};
use crate::hash::{hash_str, mix_seed};
use crate::model::{PartialQuestion, PatientCase, Trajectory};
use crate::oracle::{ActionKind, PolicyAction};
use crate::shapley::WeightVector;
use crate::sig::{
    fact_coverage, score_trajectory, sig, ScoringOracles, SigParams, TrajectoryScore,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McstConfig {
    pub exploration_c: f64,
    pub uct_epsilon: f64,
    pub max_width: usize,
    pub iterations: usize,
    pub max_depth: usize,
    pub sampling_temperature: f64,
    /// Duplicate samples tolerated per expansion before a node counts as
    /// fully expanded.
    pub novelty_attempts: usize,
    pub seed: u64,
}

impl Default for McstConfig {
    fn default() -> Self {
        McstConfig {
            exploration_c: 2.2,
            uct_epsilon: 1e-6,
            max_width: 8,
            iterations: 5,
            max_depth: 10,
            sampling_temperature: 1.0,
            novelty_attempts: 3,
            seed: 0,
        }
    }
}

impl McstConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.exploration_c >= 0.0
            && self.uct_epsilon > 0.0
            && self.max_width >= 1
            && self.iterations >= 1
            && self.sampling_temperature >= 0.0
            && self.novelty_attempts >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid search configuration: {self:?}"
            )))
        }
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McstNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// Ask or answer that led here; `None` at the root.
    pub action: Option<PolicyAction>,
    /// Patient response to an ask.
    pub response: Option<String>,
    pub children: Vec<NodeId>,
    pub visits: u64,
    pub total_reward: f64,
    pub is_terminal: bool,
    /// SIG of this node's question, for diagnostics only.
    pub local_sig: Option<f64>,
    /// Number of asks on the path from the root.
    pub depth: usize,
    /// Set once the policy stops producing novel actions here.
    pub exhausted: bool,
    #[serde(skip)]
    dedup_key: String,
}

impl McstNode {
    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_reward / self.visits as f64
        }
    }
}

/// `R̄ + c·sqrt(ln N_parent / (N + ε))`.
pub fn uct_score(node: &McstNode, parent_visits: u64, config: &McstConfig) -> f64 {
    let parent = parent_visits.max(1) as f64;
    node.mean_reward()
        + config.exploration_c * (parent.ln() / (node.visits as f64 + config.uct_epsilon)).sqrt()
}

/// Lowercase, runs of non-alphanumerics collapsed to one space, trimmed.
pub fn normalize_question(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut gap = false;
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.push(c);
        } else {
            gap = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub nodes: Vec<McstNode>,
}

impl SearchTree {
    fn new() -> Self {
        SearchTree {
            nodes: vec![McstNode {
                id: 0,
                parent: None,
                action: None,
                response: None,
                children: Vec::new(),
                visits: 0,
                total_reward: 0.0,
                is_terminal: false,
                local_sig: None,
                depth: 0,
                exhausted: false,
                dedup_key: String::new(),
            }],
        }
    }

    pub fn root(&self) -> &McstNode {
        &self.nodes[0]
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Ask/response pairs on the path to `id`.
    fn prefix(&self, id: NodeId) -> Vec<(PolicyAction, String)> {
        self.path_to(id)
            .into_iter()
            .filter_map(|n| {
                let node = &self.nodes[n];
                match (&node.action, &node.response) {
                    (Some(a), Some(r)) if a.kind == ActionKind::Ask => Some((a.clone(), r.clone())),
                    _ => None,
                }
            })
            .collect()
    }

    /// Levels below the root, counting the root as level 0.
    pub fn height(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| self.path_to(n.id).len() - 1)
            .max()
            .unwrap_or(0)
    }

    fn is_fully_expanded(&self, id: NodeId, config: &McstConfig) -> bool {
        let node = &self.nodes[id];
        node.exhausted || node.children.len() >= config.max_width
    }

    fn best_child(&self, id: NodeId, config: &McstConfig) -> Option<NodeId> {
        let parent_visits = self.nodes[id].visits;
        let mut best: Option<(NodeId, f64)> = None;
        for &c in &self.nodes[id].children {
            let score = uct_score(&self.nodes[c], parent_visits, config);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        best.map(|(c, _)| c)
    }

    fn add_child(
        &mut self,
        parent: NodeId,
        action: PolicyAction,
        response: Option<String>,
        key: String,
    ) -> NodeId {
        let id = self.nodes.len();
        let is_terminal = action.kind == ActionKind::Answer;
        let depth = self.nodes[parent].depth + usize::from(!is_terminal);
        self.nodes.push(McstNode {
            id,
            parent: Some(parent),
            action: Some(action),
            response,
            children: Vec::new(),
            visits: 0,
            total_reward: 0.0,
            is_terminal,
            local_sig: None,
            depth,
            exhausted: is_terminal,
            dedup_key: key,
        });
        self.nodes[parent].children.push(id);
        id
    }

    fn backpropagate(&mut self, leaf: NodeId, reward: f64) -> Vec<NodeId> {
        let path = self.path_to(leaf);
        for &n in &path {
            self.nodes[n].visits += 1;
            self.nodes[n].total_reward += reward;
        }
        path
    }
}

/// A finished rollout and its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub score: TrajectoryScore,
    /// Node the rollout started from.
    pub node: NodeId,
    /// Nodes whose statistics received this rollout's reward.
    pub path: Vec<NodeId>,
}

impl ScoredTrajectory {
    pub fn r_tau(&self) -> f64 {
        self.score.r_tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub case_id: String,
    pub tree: SearchTree,
    pub trajectories: Vec<ScoredTrajectory>,
    /// Index into `trajectories` of the highest-reward correct rollout.
    pub best: Option<usize>,
    pub incidents: Vec<Incident>,
}

impl SearchResult {
    pub fn best_trajectory(&self) -> Option<&ScoredTrajectory> {
        self.best.map(|i| &self.trajectories[i])
    }
}

struct Search<'a> {
    oracles: Oracles<'a>,
    case: &'a PatientCase,
    partial: &'a PartialQuestion,
    weights: &'a WeightVector,
    params: SigParams,
    config: &'a McstConfig,
    rng: ChaCha8Rng,
    tree: SearchTree,
}

impl Search<'_> {
    fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_questions: self.config.max_depth,
            temperature: self.config.sampling_temperature,
        }
    }

    fn select(&self) -> NodeId {
        let mut cur = 0;
        loop {
            let node = &self.tree.nodes[cur];
            if node.is_terminal || !self.tree.is_fully_expanded(cur, self.config) {
                return cur;
            }
            match self.tree.best_child(cur, self.config) {
                Some(c) => cur = c,
                None => return cur,
            }
        }
    }

    /// Samples up to `novelty_attempts` actions at `id`, attaching the first
    /// novel one. Returns `None` (and marks the node exhausted) when every
    /// sample duplicates an existing child.
    fn expand(&mut self, id: NodeId) -> Result<Option<NodeId>> {
        let prefix = self.tree.prefix(id);
        let history: Vec<(String, String)> = prefix
            .iter()
            .map(|(a, r)| (a.text.clone(), r.clone()))
            .collect();
        let forced = self.tree.nodes[id].depth >= self.config.max_depth;
        let existing: BTreeSet<String> = self.tree.nodes[id]
            .children
            .iter()
            .map(|&c| self.tree.nodes[c].dedup_key.clone())
            .collect();
        for _ in 0..self.config.novelty_attempts {
            let action = next_action(
                self.oracles.policy,
                self.case,
                self.partial,
                &history,
                forced,
                self.config.sampling_temperature,
                self.rng.next_u64(),
            )?;
            let key = format!("{:?}:{}", action.kind, normalize_question(&action.text));
            if existing.contains(&key) {
                continue;
            }
            if action.kind == ActionKind::Answer {
                return Ok(Some(self.tree.add_child(id, action, None, key)));
            }
            let response = self
                .oracles
                .patient
                .respond(action.body(), &self.case.facts)?;
            let child = self
                .tree
                .add_child(id, action.clone(), Some(response.clone()), key);
            let mut after = history.clone();
            after.push((action.text, response));
            self.tree.nodes[child].local_sig = self.local_sig(&history, &after);
            return Ok(Some(child));
        }
        self.tree.nodes[id].exhausted = true;
        Ok(None)
    }

    fn local_sig(&self, before: &[(String, String)], after: &[(String, String)]) -> Option<f64> {
        let cov = |h: &[(String, String)]| {
            let u = self
                .oracles
                .policy
                .understanding(self.case, self.partial, h)?;
            fact_coverage(self.oracles.checker, &u, &self.case.facts)
        };
        match (cov(before), cov(after)) {
            (Ok(b), Ok(a)) => sig(self.weights, &b, &a).ok(),
            _ => None,
        }
    }

    fn simulate(&mut self, id: NodeId) -> Result<(Trajectory, TrajectoryScore)> {
        let prefix = self.tree.prefix(id);
        let seed = self.rng.next_u64();
        let mut traj = match &self.tree.nodes[id].action {
            Some(a) if a.kind == ActionKind::Answer => {
                let mut b = crate::model::TrajectoryBuilder::new(
                    self.partial.clone(),
                    &doctor_prompt(self.case, self.partial)?,
                );
                for (q, r) in &prefix {
                    b.push_turn(q, r, None)?;
                }
                b.finish(a, &self.case.valid_letters())?
            }
            _ => rollout_from(
                &self.oracles,
                self.case,
                self.partial,
                &prefix,
                &self.episode_config(),
                seed,
            )?,
        };
        let scoring = ScoringOracles {
            policy: Some(self.oracles.policy),
            checker: self.oracles.checker,
        };
        let score = score_trajectory(&mut traj, self.case, &scoring, self.weights, &self.params)?;
        Ok((traj, score))
    }
}

/// Runs the search for one case. Oracle failures inside an iteration discard
/// that rollout and are recorded as incidents.
pub fn run_mcts(
    oracles: &Oracles<'_>,
    case: &PatientCase,
    partial: &PartialQuestion,
    weights: &WeightVector,
    params: &SigParams,
    config: &McstConfig,
) -> Result<SearchResult> {
    config.validate()?;
    params.validate()?;
    let mut search = Search {
        oracles: *oracles,
        case,
        partial,
        weights,
        params: *params,
        config,
        rng: ChaCha8Rng::seed_from_u64(mix_seed(config.seed, hash_str(&case.case_id))),
        tree: SearchTree::new(),
    };
    let mut trajectories: Vec<ScoredTrajectory> = Vec::new();
    let mut incidents = Vec::new();

    for iteration in 0..config.iterations {
        let outcome = (|| -> Result<ScoredTrajectory> {
            let mut node = search.select();
            if !search.tree.nodes[node].is_terminal {
                if let Some(child) = search.expand(node)? {
                    node = child;
                } else if let Some(c) = search.tree.best_child(node, config) {
                    node = c;
                }
            }
            let (trajectory, score) = search.simulate(node)?;
            let path = search.tree.backpropagate(node, score.r_tau);
            Ok(ScoredTrajectory {
                trajectory,
                score,
                node,
                path,
            })
        })();
        match outcome {
            Ok(t) => trajectories.push(t),
            Err(e) => {
                tracing::warn!(case = %case.case_id, iteration, error = %e, "rollout discarded");
                incidents.push(Incident {
                    iteration,
                    message: e.to_string(),
                });
            }
        }
    }

    let mut best: Option<usize> = None;
    for (i, t) in trajectories.iter().enumerate() {
        if t.score.correct && best.is_none_or(|b| t.r_tau() > trajectories[b].r_tau()) {
            best = Some(i);
        }
    }
    Ok(SearchResult {
        case_id: case.case_id.clone(),
        tree: search.tree,
        trajectories,
        best,
        incidents,
    })
}

/// Compact per-case search statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub case_id: String,
    pub nodes: usize,
    pub height: usize,
    pub rollouts: usize,
    pub correct_rollouts: usize,
    pub incidents: usize,
    #[serde(rename = "best_R_tau")]
    pub best_r_tau: Option<f64>,
    pub best_questions: Option<usize>,
}

impl SearchStats {
    pub fn new(result: &SearchResult) -> Self {
        let best = result.best_trajectory();
        SearchStats {
            case_id: result.case_id.clone(),
            nodes: result.tree.nodes.len(),
            height: result.tree.height(),
            rollouts: result.trajectories.len(),
            correct_rollouts: result
                .trajectories
                .iter()
                .filter(|t| t.score.correct)
                .count(),
            incidents: result.incidents.len(),
            best_r_tau: best.map(ScoredTrajectory::r_tau),
            best_questions: best.map(|t| t.trajectory.num_questions()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Assistant,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMessage {
    pub role: Role,
    pub content: String,
    pub supervised: bool,
}

/// A training-ready transcript. `mask` is 1 exactly on question and answer
/// tokens of `tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub case_id: String,
    pub messages: Vec<SftMessage>,
    pub tokens: Vec<String>,
    pub mask: Vec<u8>,
    #[serde(rename = "R_tau")]
    pub r_tau: f64,
}

impl SftRecord {
    pub fn from_trajectory(case: &PatientCase, traj: &Trajectory, r_tau: f64) -> Result<Self> {
        let mut messages = vec![SftMessage {
            role: Role::System,
            content: doctor_prompt(case, &traj.partial)?,
            supervised: false,
        }];
        for turn in &traj.turns {
            messages.push(SftMessage {
                role: Role::Assistant,
                content: turn.question_text.clone(),
                supervised: true,
            });
            messages.push(SftMessage {
                role: Role::User,
                content: turn.response_text.clone(),
                supervised: false,
            });
        }
        messages.push(SftMessage {
            role: Role::Assistant,
            content: traj.final_answer_text.clone(),
            supervised: true,
        });
        Ok(SftRecord {
            case_id: case.case_id.clone(),
            messages,
            tokens: traj.tokens.iter().map(|t| t.text.clone()).collect(),
            mask: traj.mask().into_iter().map(u8::from).collect(),
            r_tau,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SftExport {
    pub records: Vec<SftRecord>,
    /// Cases without an answer-correct trajectory.
    pub skipped: usize,
}

/// One record per search result that has a best trajectory.
pub fn export_sft<'a>(
    results: impl IntoIterator<Item = (&'a PatientCase, &'a SearchResult)>,
) -> Result<SftExport> {
    let mut out = SftExport::default();
    for (case, result) in results {
        match result.best_trajectory() {
            Some(best) => out.records.push(SftRecord::from_trajectory(
                case,
                &best.trajectory,
                best.r_tau(),
            )?),
            None => out.skipped += 1,
        }
    }
    Ok(out)
}
