//! Command-line front end: run experiments from a JSON config, aggregate
//! replication CSVs, and run the verification oracle suites.
//!
//! Exit codes: 0 success, 1 runtime or property failure, 2 usage/config
//! error.

mod report;
mod run;
mod verify_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bonsai", version, about = "Default-aware Bayesian optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all replications of an experiment config and write CSVs plus a
    /// manifest.
    Run {
        /// Path to the experiment config (JSON).
        config: String,
        /// Parallel replication workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<String>,
    },
    /// Aggregate the replication CSVs in a results directory.
    Report {
        /// Directory containing rep_*.csv and manifest.json.
        dir: String,
    },
    /// Run a verification oracle suite.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Gp,
    Prune,
    Kernel,
    Schedule,
}

/// Process-level outcome a subcommand maps to.
pub(crate) enum Outcome {
    Success,
    RuntimeFailure(String),
    ConfigError(String),
}

impl Outcome {
    fn exit(self) -> ExitCode {
        match self {
            Outcome::Success => ExitCode::SUCCESS,
            Outcome::RuntimeFailure(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
            Outcome::ConfigError(msg) => {
                eprintln!("config error: {msg}");
                ExitCode::from(2)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, jobs, out } => run::cmd_run(&config, jobs, out.as_deref()).exit(),
        Command::Report { dir } => report::cmd_report(&dir).exit(),
        Command::Verify { suite } => verify_cmd::cmd_verify(suite).exit(),
    }
}
