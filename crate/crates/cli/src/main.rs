use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use svqa::config::{Overrides, RunConfig};

/// Spatial VQA over synthetic warehouse scenes: data generation, feature
/// caching, two-phase training, evaluation, and routing diagnostics.
#[derive(Parser)]
#[command(name = "svqa", version, about)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (JSON-lines).
    GenData,
    /// Extract and cache global/region features for every sample.
    CacheFeatures,
    /// Run the two-phase training curriculum.
    Train,
    /// Score a checkpoint on the configured dataset.
    Eval {
        /// Checkpoint to evaluate; defaults to <checkpoint-dir>/model.tgvm.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write normalized predictions for the configured dataset.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output path; defaults to <report-dir>/predictions.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the five MoE/phase flag combinations.
    Ablation,
    /// Print per-region expert routing and the expert-by-task usage table.
    InspectGating {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);

    match &cli.command {
        Command::GenData => {
            svqa::cmd_gen_data(&cfg)?;
        }
        Command::CacheFeatures => {
            svqa::cmd_cache_features(&cfg)?;
        }
        Command::Train => {
            svqa::cmd_train(&cfg)?;
        }
        Command::Eval { checkpoint } => {
            svqa::cmd_eval(&cfg, checkpoint.as_deref())?;
        }
        Command::Predict { checkpoint, out } => {
            svqa::cmd_predict(&cfg, checkpoint.as_deref(), out.as_deref())?;
        }
        Command::Ablation => {
            svqa::cmd_ablation(&cfg)?;
        }
        Command::InspectGating { checkpoint } => {
            svqa::cmd_inspect_gating(&cfg, checkpoint.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
