//! Command-line entry points for the ray-guided motion imitation
//! experiments: corpus generation, teacher/student training, metric
//! evaluation, and ablation tables.
//!
//! Exit codes: 0 success, 2 configuration error, 3 budget warning,
//! 4 checkpoint/layout versioning error.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{AblationKind, ExitStatus};
use config::{ExperimentConfig, Variant};
use raymimic_core::Error;

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET_WARNING: i32 = 3;
pub const EXIT_VERSIONING: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "raymimic",
    about = "Ray-guided humanoid motion imitation: data generation, training, evaluation, ablations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Shrinks budgets for a fast end-to-end pass.
    #[arg(long)]
    pub smoke: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural training/evaluation corpus.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the privileged teacher policy (PPO-only motion imitation).
    TrainTeacher {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the vision-conditioned student policy.
    TrainStudent {
        #[command(flatten)]
        common: CommonArgs,
        /// Learning-strategy variant: student-ppo | student-distill | student-joint.
        #[arg(long)]
        variant: Option<String>,
    },
    ///評aluate a checkpoint on the held-out corpus with the clip protocol.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint path (defaults to <out_dir>/checkpoint.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the ablation variants over several seeds.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Which comparison family: strategy | observation | both.
        #[arg(long, default_value = "both")]
        ablation: String,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.experiment.out_dir = out.clone();
    }
    if common.smoke {
        cfg.apply_smoke();
    }
    Ok(cfg)
}

/// Runs a parsed command, returning the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result: Result<ExitStatus, Error> = (|| match &cli.command {
        Command::GenData { common } => {
            let cfg = load_config(common)?;
            commands::cmd_gen_data(&cfg)
        }
        Command::TrainTeacher { common } => {
            let cfg = load_config(common)?;
            commands::cmd_train_teacher(&cfg)
        }
        Command::TrainStudent { common, variant } => {
            let cfg = load_config(common)?;
            let v = variant.as_deref().map(Variant::parse).transpose()?;
            commands::cmd_train_student(&cfg, v)
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load_config(common)?;
            commands::cmd_evaluate(&cfg, checkpoint.clone())
        }
        Command::Ablate { common, ablation } => {
            let cfg = load_config(common)?;
            let kind = AblationKind::parse(ablation)?;
            commands::cmd_ablate(&cfg, kind)
        }
    })();
    match result {
        Ok(ExitStatus::Success) => EXIT_SUCCESS,
        Ok(ExitStatus::BudgetWarning) => EXIT_BUDGET_WARNING,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::LayoutMismatch { .. } => EXIT_VERSIONING,
                _ => EXIT_CONFIG,
            }
        }
    }
}
