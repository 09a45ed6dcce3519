//! `posecast` command-line entry point.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use config::{ExperimentConfig, Overrides};

/// Exit status for an unreadable or invalid configuration.
const EXIT_CONFIG: u8 = 2;
/// Exit status for failures while running a command.
const EXIT_RUNTIME: u8 = 1;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(
    name = "posecast",
    version,
    about = "Uncertainty-aware pose forecasting experiments"
)]
struct Cli {
    /// JSON experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment directory (config key `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the first entry of `seeds`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    Gen,
    /// Train one checkpoint per seed (and per baseline run).
    Train,
    /// Horizon, gain and cross-seed tables on the test split.
    Eval,
    /// Epistemic uncertainty from cluster assignments.
    Epu {
        #[command(subcommand)]
        action: EpuAction,
    },
    /// Learned uncertainty curves of prior-trained checkpoints.
    Report {
        /// Checkpoints to report on instead of the main run's seeds.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EpuAction {
    /// Fit the cluster model on in-family training windows.
    Fit {
        /// Cluster count (config key `epistemic.k`).
        #[arg(long)]
        k: Option<usize>,
    },
    /// EpU of in-family test forecasts.
    Score {
        /// Forecaster checkpoint (config key `epistemic.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// AUROC of held-out versus in-family EpU.
    Auroc {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// EpU of normal, frame-shuffled and joint-shuffled forecasts.
    Ood {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Epu {
            action: EpuAction::Fit { k },
        } => overrides.k = *k,
        Command::Epu {
            action:
                EpuAction::Score { checkpoint }
                | EpuAction::Auroc { checkpoint }
                | EpuAction::Ood { checkpoint },
        } => overrides.checkpoint = checkpoint.clone(),
        _ => {}
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = Ctx {
        cfg,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Gen => commands::gen(&ctx),
        Command::Train => commands::train_cmd(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Epu { action } => match action {
            EpuAction::Fit { .. } => commands::epu_fit(&ctx),
            EpuAction::Score { .. } => commands::epu_score_cmd(&ctx),
            EpuAction::Auroc { .. } => commands::epu_auroc(&ctx),
            EpuAction::Ood { .. } => commands::epu_ood(&ctx),
        },
        Command::Report { checkpoint } => commands::report(&ctx, &checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
