//! `ipcnn` command-line front end.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::Output;

#[derive(Parser)]
#[command(
    name = "ipcnn",
    version,
    about = "Delay-buffered photonic CNN accelerator simulator"
)]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Randomised delay-buffer vs. direct convolution check.
    VerifyEquivalence {
        /// Corrupt the delay offset table to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt_offsets: bool,
    },
    /// Train the digit classifier digitally and write a checkpoint.
    Train,
    /// Digital and hybrid inference with the configured faults.
    Infer,
    /// Accuracy versus detection noise.
    SweepNoise,
    /// Accuracy statistics versus path imbalance.
    SweepImbalance,
    /// Scale grid, speed curves and energy tables.
    DesignSpace,
    /// Power budgets and efficiency per architecture.
    Energy,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out = Output::new(&cli.out_dir, cfg.hash(), cfg.seed)?;
    let ctx = Context { cfg, out };
    match cli.command {
        Command::VerifyEquivalence { corrupt_offsets } => {
            commands::verify_equivalence_cmd(&ctx, corrupt_offsets)
        }
        Command::Train => commands::train_cmd(&ctx),
        Command::Infer => commands::infer_cmd(&ctx),
        Command::SweepNoise => commands::sweep_noise_cmd(&ctx),
        Command::SweepImbalance => commands::sweep_imbalance_cmd(&ctx),
        Command::DesignSpace => commands::design_space_cmd(&ctx),
        Command::Energy => commands::energy_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
