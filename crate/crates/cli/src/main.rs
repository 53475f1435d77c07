use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::Serialize;
use icrl_cli::{config, decompose, load_config, read_config, run};

#[derive(Parser)]
#[command(name = "icrl", version, about = "Iterative compositional RL on gridworld labyrinths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train subsystems until the composed task meets its requirement.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, overriding the config's `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-iteration progress on stderr.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Print the initial decomposition without training.
    Decompose { config: PathBuf },
    /// Report composability of the configured subsystems.
    Check { config: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            quiet,
        } => {
            let mut config = load_config(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(out) = out {
                config.out_dir = out;
            }
            let summary = run(&config, |row| {
                if !quiet {
                    let emp = row
                        .empirical_success
                        .map_or_else(|| "-".to_string(), |e| format!("{e:.3}"));
                    eprintln!(
                        "iter {:>3}  steps {:>8}  trained c{:<2}  sigma {:.3}  predicted {:.4}  empirical {emp}",
                        row.iteration,
                        row.total_steps,
                        row.trained_id,
                        row.sigma_hat[row.trained_id],
                        row.predicted_success,
                    );
                }
            })?;
            emit(&summary)?;
            Ok(summary.exit_code() as u8)
        }
        Command::Decompose { config } => {
            let report = decompose(&load_config(&config)?)?;
            emit(&report)?;
            Ok(if report.feasible { 0 } else { 2 })
        }
        Command::Check { config } => {
            let config = read_config(&config)?;
            let report = config.composability();
            emit(&report)?;
            if report.is_ok() {
                Ok(0)
            } else {
                eprintln!("{}", config::ConfigError::NotComposable(report));
                Ok(2)
            }
        }
    }
}

/// Pretty JSON on stdout. A closed pipe is not an error.
fn emit<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(io::Error::from)
        .and_then(|_| writeln!(out))
        .and_then(|_| out.flush());
    match written {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}
