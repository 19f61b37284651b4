//! Command-line surface tying the modules into reproducible experiments.

use crate::config::{resolve, Config};
use crate::error::{Error, Result};
use crate::experiment::{
    default_out_root, run_ablation, run_eval_experiment, run_finetune_experiment,
    run_sample_experiment, run_train_experiment,
};
use crate::theory::run_verification_suite;
use crate::trainer::{sadm_loss_grad_check, TrainMode};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "sadm",
    about = "Structure-guided adversarial diffusion training lab",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file; missing keys fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; fills trainer/dataset/sampler seeds unless set
    /// explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (defaults to $SADM_OUT/<command> or runs/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key by dot path, e.g. trainer.batch_size=32.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from scratch (or resume from a checkpoint).
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer steps (for interruption tests).
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Fine-tune a pretrained checkpoint on the configured target dataset.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short = 'n', long, default_value_t = 1000)]
        count: usize,
    },
    /// Evaluate a checkpoint against the configured dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the numerical verification suite.
    Verify,
    /// Check analytic gradients against finite differences.
    Gradcheck,
    /// Train all three modes with shared seeds and compare metrics.
    Ablate,
}

fn mode_label(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::InstanceOnly => "instance_only",
        TrainMode::StructureGuided => "structure_guided",
        TrainMode::FullSadm => "full_sadm",
    }
}

fn out_dir(common: &Common, sub: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| default_out_root().join(sub))
}

pub fn run(cli: Cli) -> Result<()> {
    let config: Config = resolve(
        cli.common.config.as_deref(),
        &cli.common.set,
        cli.common.seed,
    )?;

    match cli.command {
        Command::Train { resume, max_steps } => {
            let dir = out_dir(&cli.common, "train");
            let outcome = run_train_experiment(&dir, &config, resume.as_deref(), max_steps)?;
            println!(
                "trained {} steps (final step {}), artifacts in {}",
                outcome.steps_run,
                outcome.state.step,
                dir.display()
            );
            Ok(())
        }
        Command::Finetune { checkpoint } => {
            let dir = out_dir(&cli.common, "finetune");
            let outcome = run_finetune_experiment(&dir, &config, &checkpoint)?;
            println!(
                "fine-tuned {} steps, artifacts in {}",
                outcome.steps_run,
                dir.display()
            );
            Ok(())
        }
        Command::Sample { checkpoint, count } => {
            let dir = out_dir(&cli.common, "sample");
            let path = run_sample_experiment(&dir, &config, &checkpoint, count)?;
            println!("wrote {count} samples to {}", path.display());
            Ok(())
        }
        Command::Eval { checkpoint } => {
            let dir = out_dir(&cli.common, "eval");
            let metrics = run_eval_experiment(&dir, &config, &checkpoint)?;
            println!("sliced_wasserstein: {:.6}", metrics.sliced_w);
            if let Some(c) = metrics.coverage {
                println!("mode_coverage: {c}");
            }
            if let Some(g) = metrics.heatmap_gap {
                println!("heatmap_gap: {g:.6}");
            }
            Ok(())
        }
        Command::Verify => {
            let report = run_verification_suite(config.seed)?;
            print!("{report}");
            let dir = out_dir(&cli.common, "verify");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("verification.txt"), report.to_string())?;
            if report.passed() {
                println!("verification suite: all checks passed");
                Ok(())
            } else {
                Err(Error::Numeric {
                    step: 0,
                    t: 0.0,
                    message: "verification suite has failing checks".into(),
                })
            }
        }
        Command::Gradcheck => {
            let err = sadm_loss_grad_check(&config.model, config.seed, 1e-5)?;
            println!("full training loss gradcheck: max relative error {err:.3e}");
            if err < 1e-4 {
                Ok(())
            } else {
                Err(Error::Numeric {
                    step: 0,
                    t: 0.0,
                    message: format!("gradient check failed: {err:.3e} >= 1e-4"),
                })
            }
        }
        Command::Ablate => {
            let dir = out_dir(&cli.common, "ablate");
            let rows = run_ablation(&dir, &config)?;
            println!(
                "{:<18} {:>20} {:>14} {:>14}",
                "mode", "sliced_wasserstein", "mode_coverage", "heatmap_gap"
            );
            for row in &rows {
                println!(
                    "{:<18} {:>20.6} {:>14} {:>14}",
                    mode_label(row.mode),
                    row.metrics.sliced_w,
                    row.metrics
                        .coverage
                        .map(|c| c.to_string())
                        .unwrap_or_else(|| "-".into()),
                    row.metrics
                        .heatmap_gap
                        .map(|g| format!("{g:.6}"))
                        .unwrap_or_else(|| "-".into()),
                );
            }
            println!("ablation table written to {}", dir.join("ablation.csv").display());
            Ok(())
        }
    }
}

/// Parse argv and dispatch; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
