//! Command-line driver: JSON run configs in, checkpoints, histories, expressions and
//! metrics out.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use artifacts::FeatureSpace;
use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "symbolnet", version, about = "Train pruned symbolic networks and read them as formulas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write checkpoint, history, expressions and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every cell of the config's `grid` and report the Pareto front.
    Scan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score expressions on the test split of the config's dataset.
    Eval {
        /// `expressions.json` or a text file with one expression per line.
        expressions: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Input space the expressions expect (default: declared by the file, else raw).
        #[arg(long, value_enum)]
        space: Option<FeatureSpace>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Unroll a checkpoint into expressions.json and expressions.txt.
    Export {
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fold the stored standardization so expressions read raw features.
        #[arg(long)]
        raw_features: bool,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let (dir, _) = commands::train(&cfg, out.as_deref())?;
            log::info!("wrote {}", dir.display());
        }
        Command::Scan { config, out, seed } => {
            let cfg = load(&config, seed)?;
            if cfg.grid.is_none() {
                return Err(CliError::Config("scan needs a `grid` in the config".into()));
            }
            let (dir, _) = commands::scan(&cfg, out.as_deref())?;
            log::info!("wrote {}", dir.display());
        }
        Command::Eval { expressions, config, space, out, seed } => {
            let cfg = load(&config, seed)?;
            commands::eval(&cfg, &expressions, space, out.as_deref())?;
        }
        Command::Export { checkpoint, out, raw_features } => {
            commands::export(&checkpoint, &out, raw_features)?;
        }
    }
    Ok(())
}
