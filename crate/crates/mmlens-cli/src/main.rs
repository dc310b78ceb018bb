//! `mmlens`: train a small ECG classifier, factor it exactly into Min/Max
//! components, partition the dataset into the matching concepts, and render
//! the explanatory figure. One config file and one seed pin every stage.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use commands::{CmdError, CmdResult};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "mmlens",
    version,
    about = "Exact Min/Max factorization pipeline for small ReLU ECG classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration file (TOML). Required by every subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the global rng seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Force synthetic data generation in prep.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Enable polarity correction in prep.
    #[arg(long, global = true)]
    polarity_correction: bool,
    /// Override the expansion depth.
    #[arg(long, global = true, value_name = "N")]
    depth: Option<usize>,
    /// Override grid points per embedding dimension.
    #[arg(long, global = true, value_name = "N")]
    grid: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load or synthesize recordings and write train/test templates.
    Prep,
    /// Train the classifier on the prepared train templates.
    Train,
    /// Factor the trained model into a Min/Max expression.
    Expand,
    /// Assign samples to concepts and write the partition tables.
    Partition,
    /// Render the hierarchy figure and per-concept overlays.
    Render,
    /// Re-check expression/model equivalence and enforce coverage floors.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Check(e)) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(1)
        }
        Err(CmdError::Input(e)) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    init_thread_pool()?;
    let config_path = cli
        .config
        .ok_or_else(|| CmdError::Input(anyhow!("--config <FILE> is required")))?;
    let mut cfg = RunConfig::load(&config_path).map_err(commands::input_err)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        synthetic: cli.synthetic,
        polarity_correction: cli.polarity_correction,
        depth: cli.depth,
        grid: cli.grid,
        out: cli.out,
    });
    cfg.validate().map_err(commands::input_err)?;
    std::fs::create_dir_all(&cfg.paths.out_dir).map_err(commands::input_err)?;
    match cli.command {
        Cmd::Prep => commands::cmd_prep(&cfg),
        Cmd::Train => commands::cmd_train(&cfg),
        Cmd::Expand => commands::cmd_expand(&cfg),
        Cmd::Partition => commands::cmd_partition(&cfg),
        Cmd::Render => commands::cmd_render(&cfg),
        Cmd::Verify => commands::cmd_verify(&cfg),
    }
}

/// `MMLENS_THREADS` caps rayon's worker count for the whole process.
fn init_thread_pool() -> CmdResult {
    let Ok(raw) = std::env::var("MMLENS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CmdError::Input(anyhow!("MMLENS_THREADS must be a positive integer")))?;
    if n == 0 {
        return Err(CmdError::Input(anyhow!(
            "MMLENS_THREADS must be a positive integer"
        )));
    }
    // A failure here means the pool already exists (tests calling run()
    // repeatedly); the cap then simply stays at its first value.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
