//! `flockctl` — simulate and control velocity-alignment swarms.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use flockctl::commands;
use flockctl::config::FileConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "flockctl",
    version,
    about = "Simulate velocity-alignment swarms and synthesise consensus controls"
)]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the free dynamics and report the consensus prediction.
    Simulate,
    /// Solve the smooth optimal-control problem by adjoint gradient descent.
    Optimize,
    /// Run the sparse (ℓ1-penalised) receding-horizon controller.
    Sparse,
    /// Solve the smooth problem for a growing list of swarm sizes.
    Meanfield {
        /// Comma-separated swarm sizes, e.g. 50,100,200,400.
        #[arg(long = "n-list", value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
}

/// Sizes the global worker pool from `FLOCKCTL_THREADS` when set.
fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("FLOCKCTL_THREADS") {
        let threads: usize = raw
            .trim()
            .parse()
            .with_context(|| format!("FLOCKCTL_THREADS must be a positive integer, got {raw:?}"))?;
        anyhow::ensure!(threads > 0, "FLOCKCTL_THREADS must be ≥ 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initialising the worker pool")?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;

    let mut cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed.0 = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir.0));

    match &cli.command {
        Command::Simulate => commands::cmd_simulate(&cfg, &out),
        Command::Optimize => commands::cmd_optimize(&cfg, &out),
        Command::Sparse => commands::cmd_sparse(&cfg, &out),
        Command::Meanfield { n_list } => commands::cmd_meanfield(&cfg, &out, n_list.as_deref()),
    }
}
