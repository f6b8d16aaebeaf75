//! `auxsysid` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] auxsysid::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(e) if e.is_io() => 4,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "auxsysid", version, about = "System identification with auxiliary data")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration used where the file is silent.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "results")]
    pub out: PathBuf,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Auxiliary weight.
    #[arg(long, global = true)]
    pub q: Option<f64>,
    /// Ridge parameter.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Monte-Carlo trials.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate true and auxiliary rollouts to CSV.
    Simulate,
    /// Fit the weighted least-squares estimate and, with priors, its bound.
    Estimate,
    /// Run a built-in error-versus-data-size scenario.
    Scenario {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        id: u8,
    },
    /// Sweep the auxiliary weight and pick the bound minimizer.
    Qsweep,
    /// Estimate the coverage of a high-probability statement.
    Validate { kind: ValidateKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValidateKind {
    /// Gram-matrix lower bound.
    Prop1,
    /// Data-dependent error bound.
    Thm2,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
