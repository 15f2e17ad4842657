//! One function per subcommand. Each writes its artifacts under the output
//! directory and returns a one-line summary plus a hard-failure count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigrl::eval::{evaluate, EvalReport};
use sigrl::grpo::{clipped_objective, sample_group, TrainingBundle};
use sigrl::hash::{hash_str, mix_seed};
use sigrl::mcts::{export_sft, run_mcts, SearchResult, SearchStats, SftRecord};
use sigrl::model::{partial_for_case, PartialQuestion, PatientCase};
use sigrl::noise::{inject_noise, noise_cases, run_noise_bench, NoiseBenchReport};
use sigrl::oracle::synthetic::generate_cases;
use sigrl::oracle::Capabilities;
use sigrl::shapley::{estimate_weights, ShapleyMethod, ShapleyReport, WeightVector};
use sigrl::sig::{score_trajectory, ScoreReport, ScoringOracles};
use sigrl::{Error, Result};

use crate::backend::Backend;
use crate::config::RunConfig;
use crate::io::{
    load_dataset, read_jsonl, write_jsonl, write_report, write_text, TranscriptRecord,
};

pub const EFFECTIVE_CONFIG: &str = "effective_config.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub line: String,
    /// Cases or records that failed hard; nonzero maps to exit code 1.
    pub failures: usize,
}

/// Shared setup for every command.
pub struct Run {
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

impl Run {
    /// Finalizes and validates `config`, then echoes it into `out_dir`.
    pub fn new(mut config: RunConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.finalize();
        config.validate()?;
        let out_dir = out_dir.into();
        write_text(&out_dir.join(EFFECTIVE_CONFIG), &(config.to_json()? + "\n"))?;
        Ok(Run { config, out_dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    fn partial(&self, case: &PatientCase) -> Result<PartialQuestion> {
        partial_for_case(
            case,
            self.config.partial,
            mix_seed(self.seed(), hash_str(&case.case_id)),
        )
    }

    /// Runs `f` per item on the `--jobs` pool, or serially when the oracle
    /// forbids concurrency. Output order follows input order.
    fn per_item<T, R, F>(&self, caps: Capabilities, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        use rayon::prelude::*;
        let threads = if caps.allows_concurrency() {
            self.config.jobs.unwrap_or(0)
        } else {
            1
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(|| items.par_iter().map(f).collect()))
    }
}

/// A per-case result or the error that replaced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry<T> {
    pub case_id: String,
    #[serde(
        flatten,
        default = "Option::default",
        skip_serializing_if = "Option::is_none"
    )]
    pub result: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl<T> CaseEntry<T> {
    fn ok(case_id: &str, v: T) -> Self {
        CaseEntry {
            case_id: case_id.to_string(),
            result: Some(v),
            error: None,
        }
    }

    fn failed(case_id: &str, e: &Error) -> Self {
        tracing::error!(case = case_id, error = %e, "case failed");
        CaseEntry {
            case_id: case_id.to_string(),
            result: None,
            error: Some(e.to_string()),
        }
    }

    fn from_result(case_id: &str, r: Result<T>) -> Self {
        match r {
            Ok(v) => Self::ok(case_id, v),
            Err(e) => Self::failed(case_id, &e),
        }
    }
}

fn failures<T>(entries: &[CaseEntry<T>]) -> usize {
    entries.iter().filter(|e| e.error.is_some()).count()
}

fn group_by_case(records: Vec<TranscriptRecord>) -> BTreeMap<String, Vec<TranscriptRecord>> {
    let mut groups: BTreeMap<String, Vec<TranscriptRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.case_id.clone()).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.index);
    }
    groups
}

fn case_index(cases: &[PatientCase]) -> BTreeMap<&str, &PatientCase> {
    cases.iter().map(|c| (c.case_id.as_str(), c)).collect()
}

fn lookup<'a>(index: &BTreeMap<&str, &'a PatientCase>, id: &str) -> Result<&'a PatientCase> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| Error::InvalidInput(format!("case {id} is not in the dataset")))
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapleyBody {
    method: ShapleyMethod,
    cases: Vec<CaseEntry<ShapleyReport>>,
}

/// Shapley values and softmax weights per case (`shapley.json`).
pub fn cmd_shapley(run: &Run, exact: bool) -> Result<Summary> {
    let mut settings = run.config.shapley.clone();
    if exact {
        settings.method = ShapleyMethod::Exact;
    }
    let backend = Backend::new(&run.config)?;
    let scorer = backend.oracles().scorer;
    let cases = load_dataset(&run.config)?;
    let entries = run.per_item(scorer.capabilities(), &cases, |case| {
        let r =
            estimate_weights(scorer, case, &settings).map(|(phi, w)| ShapleyReport::new(&phi, &w));
        CaseEntry::from_result(&case.case_id, r)
    })?;
    let failed = failures(&entries);
    write_report(
        &run.path("shapley.json"),
        "shapley",
        ShapleyBody {
            method: settings.method,
            cases: entries,
        },
    )?;
    Ok(Summary {
        line: format!(
            "shapley: {} cases, {failed} failed, method {}",
            cases.len(),
            serde_json::to_value(settings.method)?
                .as_str()
                .unwrap_or_default()
        ),
        failures: failed,
    })
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct SampleOptions {
    /// SFT JSONL; defaults to `sft.jsonl` in the output directory.
    pub out: Option<PathBuf>,
    /// Per-case search statistics; defaults to `sample_report.json`.
    pub report: Option<PathBuf>,
    /// Writes every search tree to `trees/<case_id>.json`.
    pub dump_tree: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleBody {
    sft_records: usize,
    sft_skipped: usize,
    cases: Vec<CaseEntry<SearchStats>>,
}

/// Tree search per case, SFT export of the best correct rollouts, and all
/// scored rollouts as `transcripts.jsonl`.
pub fn cmd_sample(run: &Run, opts: &SampleOptions) -> Result<Summary> {
    let backend = Backend::new(&run.config)?;
    let oracles = backend.oracles();
    let cases = load_dataset(&run.config)?;
    let results = run.per_item(
        oracles.policy.capabilities(),
        &cases,
        |case| -> Result<SearchResult> {
            let partial = run.partial(case)?;
            let (_, weights) = estimate_weights(oracles.scorer, case, &run.config.shapley)?;
            run_mcts(
                &oracles,
                case,
                &partial,
                &weights,
                &run.config.sig,
                &run.config.mcts,
            )
        },
    )?;

    let mut entries = Vec::with_capacity(cases.len());
    let mut ok: Vec<(&PatientCase, SearchResult)> = Vec::new();
    for (case, r) in cases.iter().zip(results) {
        match r {
            Ok(res) => {
                entries.push(CaseEntry::ok(&case.case_id, SearchStats::new(&res)));
                ok.push((case, res));
            }
            Err(e) => entries.push(CaseEntry::failed(&case.case_id, &e)),
        }
    }
    let export = export_sft(ok.iter().map(|(c, r)| (*c, r)))?;
    write_jsonl(
        &opts.out.clone().unwrap_or_else(|| run.path("sft.jsonl")),
        &export.records,
    )?;

    let transcripts: Vec<TranscriptRecord> = ok
        .iter()
        .flat_map(|(_, r)| {
            r.trajectories
                .iter()
                .enumerate()
                .map(|(i, t)| TranscriptRecord {
                    case_id: r.case_id.clone(),
                    index: i,
                    trajectory: t.trajectory.clone(),
                    score: Some(t.score.clone()),
                })
        })
        .collect();
    write_jsonl(&run.path("transcripts.jsonl"), &transcripts)?;
    if opts.dump_tree {
        for (_, r) in &ok {
            write_text(
                &run.path("trees").join(format!("{}.json", r.case_id)),
                &(serde_json::to_string_pretty(r)? + "\n"),
            )?;
        }
    }
    let failed = failures(&entries);
    let body = SampleBody {
        sft_records: export.records.len(),
        sft_skipped: export.skipped,
        cases: entries,
    };
    write_report(
        &opts
            .report
            .clone()
            .unwrap_or_else(|| run.path("sample_report.json")),
        "sample",
        body,
    )?;
    Ok(Summary {
        line: format!(
            "sample: {} cases, {} SFT records, {} skipped without a correct rollout, {failed} failed",
            cases.len(),
            export.records.len(),
            export.skipped
        ),
        failures: failed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RolloutStats {
    trajectories: usize,
    under_filled: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rollout_errors: Vec<String>,
}

/// Group rollouts per case for the policy-optimization pipeline
/// (`transcripts.jsonl`, unscored).
pub fn cmd_rollout(run: &Run) -> Result<Summary> {
    let backend = Backend::new(&run.config)?;
    let oracles = backend.oracles();
    let cases = load_dataset(&run.config)?;
    let g = &run.config.group;
    let groups = run.per_item(oracles.policy.capabilities(), &cases, |case| {
        let partial = run.partial(case)?;
        let seed = mix_seed(run.seed(), hash_str(&case.case_id));
        sample_group(
            &oracles,
            case,
            &partial,
            g.size,
            g.depth_limit,
            g.temperature,
            seed,
        )
    })?;
    let mut entries = Vec::new();
    let mut transcripts = Vec::new();
    for (case, r) in cases.iter().zip(groups) {
        let stats = r.map(|s| {
            let stats = RolloutStats {
                trajectories: s.trajectories.len(),
                under_filled: s.under_filled,
                rollout_errors: s.failures,
            };
            transcripts.extend(s.trajectories.into_iter().enumerate().map(|(i, t)| {
                TranscriptRecord {
                    case_id: case.case_id.clone(),
                    index: i,
                    trajectory: t,
                    score: None,
                }
            }));
            stats
        });
        entries.push(CaseEntry::from_result(&case.case_id, stats));
    }
    write_jsonl(&run.path("transcripts.jsonl"), &transcripts)?;
    let failed = failures(&entries);
    let n = transcripts.len();
    write_report(
        &run.path("rollout_report.json"),
        "rollout",
        serde_json::json!({ "cases": entries }),
    )?;
    Ok(Summary {
        line: format!(
            "rollout: {} cases, {n} trajectories, {failed} failed",
            cases.len()
        ),
        failures: failed,
    })
}

/// Scores persisted transcripts (`scored.jsonl`, `score_report.json`).
pub fn cmd_score(run: &Run, transcripts: &Path) -> Result<Summary> {
    let backend = Backend::new(&run.config)?;
    let oracles = backend.oracles();
    let cases = load_dataset(&run.config)?;
    let index = case_index(&cases);
    let records: Vec<TranscriptRecord> = read_jsonl(transcripts)?;
    let mut needed: Vec<&PatientCase> = Vec::new();
    let mut seen = BTreeSet::new();
    for r in &records {
        let c = lookup(&index, &r.case_id)?;
        if seen.insert(c.case_id.as_str()) {
            needed.push(c);
        }
    }
    let weights: BTreeMap<String, Result<WeightVector>> = needed
        .iter()
        .zip(run.per_item(oracles.scorer.capabilities(), &needed, |c| {
            estimate_weights(oracles.scorer, c, &run.config.shapley).map(|(_, w)| w)
        })?)
        .map(|(c, w)| (c.case_id.clone(), w))
        .collect();
    let scoring = ScoringOracles {
        policy: Some(oracles.policy),
        checker: oracles.checker,
    };
    let scored = run.per_item(
        oracles.policy.capabilities(),
        &records,
        |r| -> Result<TranscriptRecord> {
            let case = lookup(&index, &r.case_id)?;
            let w = weights[&r.case_id].as_ref().map_err(|e| {
                Error::InvalidInput(format!("no Shapley weights for {}: {e}", r.case_id))
            })?;
            let mut traj = r.trajectory.clone();
            let score = score_trajectory(&mut traj, case, &scoring, w, &run.config.sig)?;
            Ok(TranscriptRecord {
                trajectory: traj,
                score: Some(score),
                ..r.clone()
            })
        },
    )?;
    let mut entries = Vec::new();
    let mut out = Vec::new();
    for (r, s) in records.iter().zip(scored) {
        match s {
            Ok(t) => {
                let rep = ScoreReport::new(&t.case_id, t.score.as_ref().expect("scored"));
                entries.push(CaseEntry::ok(&r.case_id, (r.index, rep)));
                out.push(t);
            }
            Err(e) => entries.push(CaseEntry::failed(&r.case_id, &e)),
        }
    }
    write_jsonl(&run.path("scored.jsonl"), &out)?;
    let failed = failures(&entries);
    let rows: Vec<serde_json::Value> = entries
        .iter()
        .map(|e| match (&e.result, &e.error) {
            (Some((i, rep)), _) => serde_json::json!({ "index": i, "score": rep }),
            (None, err) => serde_json::json!({ "case_id": e.case_id, "error": err }),
        })
        .collect();
    write_report(
        &run.path("score_report.json"),
        "score",
        serde_json::json!({ "trajectories": rows }),
    )?;
    Ok(Summary {
        line: format!("score: {} trajectories, {failed} failed", records.len()),
        failures: failed,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleStats {
    #[serde(rename = "R_taus")]
    r_taus: Vec<f64>,
    advantage_mean: f64,
    advantage_std: f64,
    guard_fired: bool,
}

/// Training bundles from scored transcripts, one per case group
/// (`bundles.jsonl`, `distribute_report.json`).
pub fn cmd_distribute(run: &Run, transcripts: &Path) -> Result<Summary> {
    let groups: Vec<(String, Vec<TranscriptRecord>)> = group_by_case(read_jsonl(transcripts)?)
        .into_iter()
        .collect();
    let built = run.per_item(
        Capabilities::default(),
        &groups,
        |(case_id, members)| -> Result<TrainingBundle> {
            let mut group = Vec::with_capacity(members.len());
            for m in members {
                let score = m.score.clone().ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{case_id} trajectory {} is unscored; run `score` first",
                        m.index
                    ))
                })?;
                group.push((m.trajectory.clone(), score));
            }
            TrainingBundle::build(case_id, &group, &run.config.dist, run.config.group.pooling)
        },
    )?;
    let mut entries = Vec::new();
    let mut bundles = Vec::new();
    for ((case_id, _), b) in groups.iter().zip(built) {
        match b {
            Ok(b) => {
                let stats = BundleStats {
                    r_taus: b.r_taus.clone(),
                    advantage_mean: b.advantage_mean,
                    advantage_std: b.advantage_std,
                    guard_fired: b.guard_fired,
                };
                entries.push(CaseEntry::ok(case_id, stats));
                bundles.push(b);
            }
            Err(e) => entries.push(CaseEntry::failed(case_id, &e)),
        }
    }
    write_jsonl(&run.path("bundles.jsonl"), &bundles)?;
    let failed = failures(&entries);
    write_report(
        &run.path("distribute_report.json"),
        "distribute",
        serde_json::json!({ "groups": entries }),
    )?;
    Ok(Summary {
        line: format!("distribute: {} groups, {failed} failed", groups.len()),
        failures: failed,
    })
}

/// New-policy log-probs for one bundle, one vector per trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogpNewRecord {
    pub case_id: String,
    pub logp_new: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectiveStats {
    objective: f64,
    /// No new log-probs were supplied; the old ones were reused.
    ratio_one: bool,
}

/// Evaluates the clipped objective per bundle (`objective_report.json`,
/// `objective_bundles.jsonl`).
pub fn cmd_objective(run: &Run, bundles: &Path, logp_new: Option<&Path>) -> Result<Summary> {
    let bundles: Vec<TrainingBundle> = read_jsonl(bundles)?;
    let new: BTreeMap<String, Vec<Vec<f64>>> = match logp_new {
        Some(p) => read_jsonl::<LogpNewRecord>(p)?
            .into_iter()
            .map(|r| (r.case_id, r.logp_new))
            .collect(),
        None => BTreeMap::new(),
    };
    let evaluated = run.per_item(
        Capabilities::default(),
        &bundles,
        |b| -> Result<(TrainingBundle, ObjectiveStats)> {
            let (lp, ratio_one) = match new.get(&b.case_id) {
                Some(lp) => (lp.clone(), false),
                None => {
                    let old: Option<Vec<Vec<f64>>> =
                        b.trajectories.iter().map(|t| t.logp_old.clone()).collect();
                    let old = old.ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "{}: no new log-probs and no stored old ones",
                            b.case_id
                        ))
                    })?;
                    (old, true)
                }
            };
            let objective = clipped_objective(&b.objective_samples(&lp)?, &run.config.objective)?;
            Ok((
                TrainingBundle {
                    objective: Some(objective),
                    ..b.clone()
                },
                ObjectiveStats {
                    objective,
                    ratio_one,
                },
            ))
        },
    )?;
    let mut entries = Vec::new();
    let mut out = Vec::new();
    for (b, r) in bundles.iter().zip(evaluated) {
        match r {
            Ok((bundle, stats)) => {
                out.push(bundle);
                entries.push(CaseEntry::ok(&b.case_id, stats));
            }
            Err(e) => entries.push(CaseEntry::failed(&b.case_id, &e)),
        }
    }
    let values: Vec<f64> = entries
        .iter()
        .filter_map(|e| e.result.as_ref().map(|s| s.objective))
        .collect();
    let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    write_jsonl(&run.path("objective_bundles.jsonl"), &out)?;
    let failed = failures(&entries);
    write_report(
        &run.path("objective_report.json"),
        "objective",
        serde_json::json!({ "mean_objective": mean, "groups": entries }),
    )?;
    let shown = mean.map_or("n/a".to_string(), |m| format!("{m:.6}"));
    Ok(Summary {
        line: format!(
            "objective: {} groups, mean {shown}, {failed} failed",
            bundles.len()
        ),
        failures: failed,
    })
}

/// Single-rollout accuracy with bootstrap (`eval_report.json`,
/// `transcripts.jsonl`).
pub fn cmd_eval(run: &Run) -> Result<(Summary, EvalReport)> {
    let backend = Backend::new(&run.config)?;
    let oracles = backend.oracles();
    let cases = load_dataset(&run.config)?;
    let caps = oracles.policy.capabilities();
    let pool_run = run.per_item(caps, &[()], |_| {
        evaluate(&oracles, &cases, &run.config.eval)
    })?;
    let (report, trajectories) = pool_run.into_iter().next().expect("one item")?;
    let transcripts: Vec<TranscriptRecord> = cases
        .iter()
        .zip(trajectories)
        .filter_map(|(c, t)| {
            t.map(|trajectory| TranscriptRecord {
                case_id: c.case_id.clone(),
                index: 0,
                trajectory,
                score: None,
            })
        })
        .collect();
    write_jsonl(&run.path("transcripts.jsonl"), &transcripts)?;
    write_report(&run.path("eval_report.json"), "eval", &report)?;
    let line = format!(
        "eval: accuracy {:.2}% (bootstrap {:.2} ± {:.2}, B = {}) over {} cases, {} failed",
        report.accuracy,
        report.bootstrap.mean,
        report.bootstrap.std,
        report.bootstrap.resamples,
        report.cases,
        report.failures
    );
    let failures = report.failures;
    Ok((Summary { line, failures }, report))
}

/// Shapley versus leave-one-out Recall@K after noise injection
/// (`noise_report.json`).
pub fn cmd_noise_bench(run: &Run) -> Result<(Summary, NoiseBenchReport)> {
    let backend = Backend::new(&run.config)?;
    let scorer = backend.oracles().scorer;
    let n = &run.config.noise;
    let cases = match &run.config.dataset {
        Some(_) => {
            let base = load_dataset(&run.config)?;
            base.iter()
                .map(|c| {
                    let dummies: Vec<String> = (0..n.dummies)
                        .map(|d| format!("Unrelated remark {d} for case {}.", c.case_id))
                        .collect();
                    inject_noise(c, &dummies, n.seed)
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => noise_cases(n)?,
    };
    let report = run.per_item(scorer.capabilities(), &[()], |_| {
        run_noise_bench(
            scorer,
            &cases,
            &n.ks,
            n.method,
            n.subset_limit,
            &n.monte_carlo,
        )
    })?;
    let report = report.into_iter().next().expect("one item")?;
    write_report(&run.path("noise_report.json"), "noise-bench", &report)?;
    let cells: Vec<String> = report
        .ks
        .iter()
        .map(|k| {
            format!(
                "R@{k} shapley {:.3} loo {:.3}",
                report.shapley[k], report.loo[k]
            )
        })
        .collect();
    Ok((
        Summary {
            line: format!("noise-bench: {} cases, {}", report.cases, cells.join(", ")),
            failures: 0,
        },
        report,
    ))
}

/// SFT records from scored transcripts: per case the highest-reward correct
/// trajectory; cases without one are skipped and counted
/// (`sft.jsonl`, `export_report.json`).
pub fn cmd_export_sft(run: &Run, transcripts: &Path) -> Result<Summary> {
    let cases = load_dataset(&run.config)?;
    let index = case_index(&cases);
    let groups = group_by_case(read_jsonl(transcripts)?);
    let mut records: Vec<SftRecord> = Vec::new();
    let mut skipped = Vec::new();
    for (case_id, members) in &groups {
        let case = lookup(&index, case_id)?;
        let mut best: Option<(&TranscriptRecord, f64)> = None;
        for m in members {
            let score = m.score.as_ref().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{case_id} trajectory {} is unscored; run `score` first",
                    m.index
                ))
            })?;
            if score.correct && best.is_none_or(|(_, r)| score.r_tau > r) {
                best = Some((m, score.r_tau));
            }
        }
        match best {
            Some((m, r)) => records.push(SftRecord::from_trajectory(case, &m.trajectory, r)?),
            None => skipped.push(case_id.clone()),
        }
    }
    write_jsonl(&run.path("sft.jsonl"), &records)?;
    write_report(
        &run.path("export_report.json"),
        "export-sft",
        serde_json::json!({ "records": records.len(), "skipped": skipped.len(), "skipped_cases": skipped }),
    )?;
    Ok(Summary {
        line: format!(
            "export-sft: {} records, {} cases skipped",
            records.len(),
            skipped.len()
        ),
        failures: 0,
    })
}

/// Writes generated synthetic cases as dataset JSONL.
pub fn cmd_synth_data(run: &Run, out: Option<&Path>) -> Result<Summary> {
    let s = &run.config.synthetic;
    let cases = generate_cases(s.cases, &s.params, run.seed())?;
    let path = out.map_or_else(|| run.path("cases.jsonl"), Path::to_path_buf);
    write_text(&path, &sigrl::model::cases_to_jsonl(&cases)?)?;
    Ok(Summary {
        line: format!(
            "synth-data: {} cases written to {}",
            cases.len(),
            path.display()
        ),
        failures: 0,
    })
}
