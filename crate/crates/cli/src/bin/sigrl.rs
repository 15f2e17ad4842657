use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sigrl::Result;
use sigrl_cli::commands::{self, SampleOptions};
use sigrl_cli::{exit_code, OracleMode, Run, RunConfig, Summary};

#[derive(Parser)]
#[command(
    name = "sigrl",
    version,
    about = "Shapley-weighted rewards for proactive clinical dialogue"
)]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Case JSONL; synthetic mode generates cases when omitted.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Case-level worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    oracle: Option<OracleMode>,
    /// Restrict the run to this case id (repeatable).
    #[arg(long = "case", global = true)]
    cases: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shapley values and weights per case.
    Shapley {
        /// Enumerate subsets instead of sampling permutations.
        #[arg(long)]
        exact: bool,
    },
    /// Tree search per case and SFT export.
    Sample {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        dump_tree: bool,
    },
    /// Group rollouts per case.
    Rollout {
        #[arg(long)]
        group_size: Option<usize>,
    },
    /// Score persisted transcripts.
    Score {
        #[arg(long)]
        transcripts: PathBuf,
    },
    /// Reward distribution and group advantages.
    Distribute {
        #[arg(long)]
        transcripts: PathBuf,
    },
    /// Clipped objective for training bundles.
    Objective {
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        logp_new: Option<PathBuf>,
    },
    /// Exact-match accuracy with bootstrap.
    Eval {
        #[arg(long)]
        max_questions: Option<usize>,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Shapley versus leave-one-out on noise-injected cases.
    NoiseBench,
    /// SFT records from scored transcripts.
    ExportSft {
        #[arg(long)]
        transcripts: PathBuf,
    },
    /// Write a synthetic dataset.
    SynthData {
        /// Number of cases to generate.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging() {
    let level = std::env::var("SIGRL_LOG")
        .ok()
        .and_then(|v| v.parse::<tracing::Level>().ok())
        .unwrap_or(tracing::Level::WARN);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
}

fn execute(cli: Cli) -> Result<Summary> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.dataset.is_some() {
        config.dataset = cli.dataset.clone();
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    if let Some(mode) = cli.oracle {
        config.oracle = mode;
    }
    if !cli.cases.is_empty() {
        config.cases = cli.cases.clone();
    }
    match &cli.command {
        Command::Rollout {
            group_size: Some(k),
        } => config.group.size = *k,
        Command::Eval {
            max_questions,
            resamples,
        } => {
            if let Some(q) = max_questions {
                config.eval.episode.max_questions = *q;
            }
            if let Some(b) = resamples {
                config.eval.bootstrap_resamples = *b;
            }
        }
        Command::SynthData { count: Some(n), .. } => config.synthetic.cases = *n,
        _ => {}
    }
    let run = Run::new(config, &cli.out_dir)?;
    match cli.command {
        Command::Shapley { exact } => commands::cmd_shapley(&run, exact),
        Command::Sample {
            out,
            report,
            dump_tree,
        } => commands::cmd_sample(
            &run,
            &SampleOptions {
                out,
                report,
                dump_tree,
            },
        ),
        Command::Rollout { .. } => commands::cmd_rollout(&run),
        Command::Score { transcripts } => commands::cmd_score(&run, &transcripts),
        Command::Distribute { transcripts } => commands::cmd_distribute(&run, &transcripts),
        Command::Objective { bundles, logp_new } => {
            commands::cmd_objective(&run, &bundles, logp_new.as_deref())
        }
        Command::Eval { .. } => commands::cmd_eval(&run).map(|(s, _)| s),
        Command::NoiseBench => commands::cmd_noise_bench(&run).map(|(s, _)| s),
        Command::ExportSft { transcripts } => commands::cmd_export_sft(&run, &transcripts),
        Command::SynthData { out, .. } => commands::cmd_synth_data(&run, out.as_deref()),
    }
}

fn main() -> ExitCode {
    init_logging();
    match execute(Cli::parse()) {
        Ok(summary) => {
            println!("{}", summary.line);
            if summary.failures > 0 {
                ExitCode::from(sigrl_cli::EXIT_FAILURE as u8)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
