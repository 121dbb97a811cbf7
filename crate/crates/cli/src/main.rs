//! `fci`: simulation, forecasting, portfolio and backtest driver.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fci", version, about = "Forecast confidence intervals for neural-network return forecasts")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration file; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every random stream of the run derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving the output files.
    #[arg(long, global = true, default_value = "fci-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo coverage experiment for the forecast intervals.
    Simulate,
    /// Fit the network on a panel and save it.
    Train {
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Forecast a weighted portfolio return with analytic and bootstrap intervals.
    Fci {
        #[arg(long)]
        panel: Option<PathBuf>,
        /// CSV with `asset_id,weight`.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Solve one portfolio problem.
    Portfolio,
    /// Select assets by multiple testing.
    Select,
    /// Rolling-window backtest on a monthly panel.
    Backtest {
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Factor returns for alpha regressions.
        #[arg(long)]
        factors: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.common.threads {
        Some(0) => return Err(CliError::Usage("--threads must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let common = &cli.common;
    match cli.command {
        Command::Simulate => commands::simulate::run(common),
        Command::Train { panel } => commands::train::run(common, panel),
        Command::Fci { panel, weights } => commands::fci::run(common, panel, weights),
        Command::Portfolio => commands::portfolio::run(common),
        Command::Select => commands::select::run(common),
        Command::Backtest { panel, factors } => commands::backtest::run(common, panel, factors),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
