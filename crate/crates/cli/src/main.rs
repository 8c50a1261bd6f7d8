//! `nyscluster`: generate data, cluster it, run benchmarks and check the
//! truncation identity and perturbation bound from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 invariant violation.

mod commands;
mod data;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{BenchArgs, ClusterArgs, GenerateArgs, VerifyArgs};

#[derive(Debug, Parser)]
#[command(
    name = "nyscluster",
    version,
    about = "Nyström-accelerated spectral clustering"
)]
struct Cli {
    /// Worker threads for trials and kernel construction (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level: -v for info, -vv for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic data set as CSV.
    Generate(GenerateArgs),
    /// Cluster one data set and write per-sample labels.
    Cluster(ClusterArgs),
    /// Multi-trial accuracy and timing experiments.
    Bench(BenchArgs),
    /// Check the truncation identity (1) or the perturbation bound (2).
    Verify(VerifyArgs),
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
    Invariant(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<nyscluster::Error> for Failure {
    fn from(e: nyscluster::Error) -> Self {
        match e {
            nyscluster::Error::InvalidArgument(msg) => Failure::Usage(msg),
            nyscluster::Error::SizeLimit { .. } => Failure::Runtime(anyhow::anyhow!(
                "{e}; use --method proposed, which never forms the n x n kernel"
            )),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Bench(a) => commands::bench(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `nyscluster --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant violated: {msg}");
            ExitCode::from(3)
        }
    }
}
