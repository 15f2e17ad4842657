//! Command-level behavior through the library entry points and the binary.

use std::path::Path;
use std::process::Command;

use serde_json::Value;
use sigrl::model::{cases_to_jsonl, AtomicFact, OptionSet, PatientCase};
use sigrl::oracle::synthetic::{SyntheticBehavior, SyntheticPolicy, SyntheticValueSpec};
use sigrl_cli::commands::{cmd_distribute, cmd_eval, cmd_noise_bench, cmd_rollout, cmd_shapley};
use sigrl_cli::{Run, RunConfig};

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn case(id: &str, n: usize, spec: SyntheticValueSpec) -> PatientCase {
    PatientCase {
        case_id: id.into(),
        question_type: "diagnosis".into(),
        atomic_question: "Which diagnosis fits best?".into(),
        facts: (0..n)
            .map(|i| AtomicFact {
                id: i,
                text: format!("Finding {i}."),
                is_relevant: true,
            })
            .collect(),
        options: ['A', 'B', 'C']
            .iter()
            .map(|&l| (l, format!("Option {l}")))
            .collect(),
        gold_answer: OptionSet::new(['B']),
        partial_fact_ids: None,
        synthetic: Some(spec),
    }
}

fn dataset(dir: &Path, cases: &[PatientCase]) -> std::path::PathBuf {
    let p = dir.join("cases.jsonl");
    std::fs::write(&p, cases_to_jsonl(cases).unwrap()).unwrap();
    p
}

#[test]
fn additive_dataset_reports_configured_weights() {
    let dir = tempfile::tempdir().unwrap();
    let weights = vec![0.3, -0.1, 0.05, 0.7];
    let ds = dataset(
        dir.path(),
        &[case(
            "add-1",
            4,
            SyntheticValueSpec::additive(weights.clone(), -2.0),
        )],
    );
    for exact in [false, true] {
        let out = dir.path().join(if exact { "exact" } else { "mc" });
        let run = Run::new(
            RunConfig {
                dataset: Some(ds.clone()),
                ..Default::default()
            },
            &out,
        )
        .unwrap();
        assert_eq!(cmd_shapley(&run, exact).unwrap().failures, 0);
        let report = read_json(&out.join("shapley.json"));
        assert_eq!(report["schema_version"], 1);
        let values: Vec<f64> =
            serde_json::from_value(report["cases"][0]["values"].clone()).unwrap();
        for (v, w) in values.iter().zip(&weights) {
            assert!((v - w).abs() < 1e-12, "{v} vs {w}");
        }
    }
}

#[test]
fn exact_refuses_large_cases() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(
        dir.path(),
        &[case(
            "big",
            15,
            SyntheticValueSpec::additive(vec![0.1; 15], 0.0),
        )],
    );
    let run = Run::new(
        RunConfig {
            dataset: Some(ds),
            ..Default::default()
        },
        dir.path().join("out"),
    )
    .unwrap();
    let s = cmd_shapley(&run, true).unwrap();
    assert_eq!(s.failures, 1);
    let report = read_json(&dir.path().join("out/shapley.json"));
    let err = report["cases"][0]["error"].as_str().unwrap();
    assert!(err.contains("15") && err.contains("12"), "{err}");
}

#[test]
fn eval_with_gold_and_wrong_oracles() {
    for (behavior, expect) in [
        (SyntheticBehavior::AnswerGold, 100.0),
        (SyntheticBehavior::AnswerWrong, 0.0),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.synthetic.cases = 30;
        cfg.synthetic.policy = SyntheticPolicy::with_behavior(behavior);
        let run = Run::new(cfg, dir.path()).unwrap();
        let (_, report) = cmd_eval(&run).unwrap();
        assert_eq!(report.accuracy, expect);
        assert_eq!(report.bootstrap.std, 0.0);
    }
}

#[test]
fn noise_bench_examples() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.noise.cases = 20;
    cfg.noise.extra_relevant = 0;
    cfg.noise.ks = vec![3];
    let run = Run::new(cfg.clone(), dir.path().join("a")).unwrap();
    let (_, r) = cmd_noise_bench(&run).unwrap();
    assert_eq!(r.shapley[&3], 1.0);
    assert!(r.loo[&3] < 1.0);

    cfg.noise.dummies = 0;
    cfg.noise.ks = vec![1, 3];
    let run = Run::new(cfg.clone(), dir.path().join("b")).unwrap();
    let (_, r) = cmd_noise_bench(&run).unwrap();
    assert!(r.shapley.values().chain(r.loo.values()).all(|&v| v == 1.0));

    cfg.noise.ks = vec![4];
    let run = Run::new(cfg, dir.path().join("c")).unwrap();
    assert!(cmd_noise_bench(&run).is_err());
}

#[test]
fn distribute_rejects_unscored_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.synthetic.cases = 3;
    cfg.group.size = 3;
    let run = Run::new(cfg, dir.path()).unwrap();
    cmd_rollout(&run).unwrap();
    let s = cmd_distribute(&run, &dir.path().join("transcripts.jsonl")).unwrap();
    assert_eq!(s.failures, 3);
}

fn sigrl(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sigrl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

#[test]
fn binary_exit_codes_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "seed = 5\n[synthetic]\ncases = 6\n[eval]\nbootstrap_resamples = 50\n",
    )
    .unwrap();
    let (code, stdout) = sigrl(&["eval", "--config", "run.toml", "--out-dir", "o"], d);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.starts_with("eval: accuracy 100.00%"), "{stdout}");
    let echoed = read_json(&d.join("o/effective_config.json"));
    assert_eq!(echoed["seed"], 5);
    assert_eq!(echoed["eval"]["seed"], 5);
    assert_eq!(echoed["eval"]["bootstrap_resamples"], 50);

    let (code, _) = sigrl(
        &[
            "eval",
            "--config",
            "run.toml",
            "--seed",
            "9",
            "--out-dir",
            "o2",
        ],
        d,
    );
    assert_eq!(code, 0);
    assert_eq!(
        read_json(&d.join("o2/effective_config.json"))["mcts"]["seed"],
        9
    );

    std::fs::write(d.join("bad.toml"), "[sig]\nalpha = -1.0\n").unwrap();
    assert_eq!(sigrl(&["eval", "--config", "bad.toml"], d).0, 2);
    assert_eq!(sigrl(&["eval", "--dataset", "missing.jsonl"], d).0, 2);
    assert_eq!(sigrl(&["no-such-command"], d).0, 2);

    let big = case("big", 15, SyntheticValueSpec::additive(vec![0.1; 15], 0.0));
    dataset(d, &[big]);
    assert_eq!(
        sigrl(&["shapley", "--exact", "--dataset", "cases.jsonl"], d).0,
        1
    );
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn effective_config_reloads_unchanged(
        seed in proptest::option::of(0u64..1 << 40),
        jobs in 1usize..16,
        size in 2usize..32,
        clip in 0.01f64..0.99,
        alpha in 0.0f64..10.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig {
            seed,
            jobs: Some(jobs),
            ..Default::default()
        };
        cfg.group.size = size;
        cfg.objective.clip_eps = clip;
        cfg.sig.alpha = alpha;
        cfg.finalize();
        let json = cfg.to_json().unwrap();
        let path = dir.path().join("effective_config.json");
        std::fs::write(&path, &json).unwrap();
        let mut back = RunConfig::load(&path).unwrap();
        back.finalize();
        back.validate().unwrap();
        proptest::prop_assert_eq!(back.to_json().unwrap(), json);
    }
}
