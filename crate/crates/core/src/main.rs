use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evigen::orchestrator::{self, OrchestratorError, RunConfig, ScoringSection};
use evigen::prompt::Stage;
use evigen::scoring::LenientRecallDenominator;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "evigen", version, about = "Evidence-grounded clinical question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Subcommand)]
enum Command {
    /// Run both stages over the configured cases and write a submission.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a submission against gold annotations.
    Evaluate {
        #[arg(long)]
        submission: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Scoring options are read from this config's `[scoring]` section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Use essential-only lenient recall.
        #[arg(long)]
        lenient_recall_essential: bool,
        /// Require all six relevance metrics.
        #[arg(long)]
        official: bool,
        #[arg(long, default_value = "submission")]
        label: String,
    },
    /// Optimize the prompt of one stage.
    Optimize {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a configuration with completions served from a transcript.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Path, out: Option<PathBuf>) -> Result<RunConfig, OrchestratorError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(out) = out {
        cfg.run.out_dir = out;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), OrchestratorError> {
    match cli.command {
        Command::Run { config, out } => {
            let outputs = orchestrator::cmd_run(&load(&config, out)?)?;
            println!(
                "{} answers written to {}",
                outputs.submission.entries.len(),
                outputs.submission_path.display()
            );
        }
        Command::Replay {
            transcript,
            config,
            out,
        } => {
            let outputs = orchestrator::cmd_replay(&load(&config, out)?, &transcript)?;
            println!("replayed {} answers into {}", outputs.submission.entries.len(), outputs.submission_path.display());
        }
        Command::Evaluate {
            submission,
            gold,
            config,
            out,
            lenient_recall_essential,
            official,
            label,
        } => {
            let mut scoring = match config {
                Some(path) => RunConfig::parse(
                    &std::fs::read_to_string(&path)
                        .map_err(|e| OrchestratorError::Config(format!("cannot read {}: {e}", path.display())))?,
                    path.parent().unwrap_or(Path::new(".")),
                    std::env::vars(),
                )?
                .scoring,
                None => ScoringSection::default(),
            };
            if lenient_recall_essential {
                scoring.protocol.lenient_recall_denominator = LenientRecallDenominator::Essential;
            }
            scoring.protocol.official |= official;
            let report = orchestrator::cmd_evaluate(&submission, &gold, &scoring, &out)?;
            print!("{}", report.table.render(&label));
        }
        Command::Optimize { stage, config, out } => {
            let stage = match stage {
                StageArg::One => Stage::Evidence,
                StageArg::Two => Stage::Answer,
            };
            let outputs = orchestrator::cmd_optimize(&load(&config, out)?, stage)?;
            let r = &outputs.result;
            println!(
                "{}: seed {:.4} -> best {:.4} (delta {:+.4}), best config {:?}",
                r.objective_name,
                r.seed_full_score,
                r.best_full_score,
                r.best_full_score - r.seed_full_score,
                r.best_choice
            );
            println!("artifacts in {}", outputs.artifact_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("EVIGEN_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
