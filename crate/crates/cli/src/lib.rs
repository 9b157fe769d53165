//! Command-line pipeline for the paramcast research engine.

pub mod commands;
pub mod config;
pub mod files;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "paramcast",
    about = "Forecast rolling linear-model parameters and backtest the predictions"
)]
pub struct Cli {
    /// Flat key-value (TOML) configuration file; defaults apply if omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic market with known generating parameters.
    Synth,
    /// Compute the indicator feature matrix and labels.
    Features,
    /// Collect rolling linear-model parameters at every scale.
    Collect,
    /// Train the multi-scale sequential model.
    Train,
    /// Walk the test range with the trained model.
    Predict,
    /// Run the top-K simulation over saved predictions.
    Backtest {
        /// Also render an SVG chart of the equity curves.
        #[arg(long)]
        svg: bool,
    },
    /// Compare static, rotation, single-scale and multi-scale methods.
    Report,
    /// Grid-search the model hyperparameters by validation MSE.
    Grid,
}

/// Resolve the configuration (file plus overrides) and run the command.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.display().to_string();
    }
    commands::run(&config, &cli.command)
}
