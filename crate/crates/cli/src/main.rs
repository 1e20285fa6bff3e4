//! fopkit: face-voice association toolkit over precomputed embeddings.
//!
//! Exit codes: 0 success, 2 usage/configuration errors, 3 data errors
//! (missing or corrupt files, shape mismatches), 4 numeric failures
//! (non-finite values, undefined metrics, failed self-checks).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fopkit::error::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "fopkit",
    version,
    about = "Joint face-voice embeddings: gated fusion, orthogonality-constraint training, cross-modal evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Run configuration file (flat key=value; see `fopkit defaults`)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides out_dir from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output directory (synth only)
    #[arg(long)]
    force: bool,
    /// Master seed (overrides seed from the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path (overrides the default <out_dir>/checkpoint.fopc)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic paired stores, a split, and trial lists
    Synth(CommonArgs),
    /// Train the configured loss on the prepared stores
    Train(CommonArgs),
    /// Evaluate a checkpoint (task from eval.task or --task)
    Eval(EvalArgs),
    /// Train and evaluate across the alpha grid
    AblateAlpha(CommonArgs),
    /// One instrumented epoch per loss kind with work counters
    BenchLosses(CommonArgs),
    /// Heard/unheard language verification comparison
    Crosslang(CommonArgs),
    /// Print the default configuration
    Defaults,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// verify or match
    #[arg(long)]
    task: Option<String>,
}

fn resolve_config(args: &CommonArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(ckpt) = &args.checkpoint {
        cfg.eval_checkpoint = ckpt.display().to_string();
    }
    Ok(cfg)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::NonFinite { .. } | Error::UndefinedMetric(_) | Error::SelfCheck(_) => 4,
        _ => 3,
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap renders its own message; usage failures exit 2 below
        let _ = e.print();
        Error::Config(String::new())
    })?;
    match cli.command {
        Command::Synth(args) => commands::cmd_synth(&resolve_config(&args)?, args.force),
        Command::Train(args) => commands::cmd_train(&resolve_config(&args)?),
        Command::Eval(args) => {
            let mut cfg = resolve_config(&args.common)?;
            if let Some(task) = &args.task {
                cfg.set("eval.task", task)?;
            }
            commands::cmd_eval(&cfg)
        }
        Command::AblateAlpha(args) => commands::cmd_ablate_alpha(&resolve_config(&args)?),
        Command::BenchLosses(args) => commands::cmd_bench_losses(&resolve_config(&args)?),
        Command::Crosslang(args) => commands::cmd_crosslang(&resolve_config(&args)?),
        Command::Defaults => {
            commands::cmd_defaults();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = err.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}
