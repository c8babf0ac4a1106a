//! Command-line front end: algebra self-checks, propagator runs, and the
//! study battery, all driven by a validated TOML config.
//!
//! Exit codes: 0 success, 1 identity/solver/contract failure, 2 config error.

mod algebra;
mod config;
mod runs;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// A failure routed to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// A solver error or a violated numerical contract (exit 1).
    Failure(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn failure(msg: impl Into<String>) -> Self {
        CliError::Failure(msg.into())
    }

    pub fn from_core(e: polychaos::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "polychaos", about = "Chaos-expansion solvers and studies", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Catalan,
    Rescaling,
    McCompare,
    Restart,
    Causality,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the chaos-algebra identities and print a JSON report.
    AlgebraCheck {
        /// Largest multiindex degree exercised.
        #[arg(long, default_value_t = 4)]
        max_degree: u32,
        /// Number of basis indices the identities range over.
        #[arg(long, default_value_t = 3)]
        basis_size: u32,
        /// Corrupt one binomial weight in the reference computation
        /// (negative control: the check must fail).
        #[arg(long, hide = true)]
        corrupt_binomial: bool,
    },
    /// Run the configured sweep and write manifest, fields and norms.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Force sequential execution (bit-exact reference mode).
        #[arg(long)]
        serial: bool,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run one study and write its report files.
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::AlgebraCheck {
            max_degree,
            basis_size,
            corrupt_binomial,
        } => algebra::run(max_degree, basis_size, corrupt_binomial),
        Command::Solve {
            config,
            serial,
            seed,
            out_dir,
        } => runs::cmd_solve(&config, serial, seed, out_dir.as_deref()),
        Command::Study {
            kind,
            config,
            serial,
            seed,
            out_dir,
        } => study::cmd_study(kind, &config, serial, seed, out_dir.as_deref()),
    }
}
