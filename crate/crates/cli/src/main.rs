//! Conflict-probability pipeline driver.
//!
//! Subcommands mirror the pipeline stages; every stage persists its
//! artifacts in the configured output directory and reuses whatever a
//! previous invocation left there.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::stages::RunContext;

#[derive(Parser)]
#[command(name = "windconflict", version, about = "Wind-ensemble conflict probability pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, pool and canonicalize the wind ensembles.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the modal expansion and print the explained-variance table.
    Decompose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Plan at the quadrature nodes and fit per-pair surrogates.
    Surrogate {
        #[arg(long)]
        config: PathBuf,
        /// Print surrogate coefficients as text.
        #[arg(long)]
        dump: bool,
    },
    /// Run the conflict analysis for every aircraft pair.
    Detect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render detection results into plot CSVs and a text summary.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rerun the pipeline across a range of retained-mode counts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive mode range, e.g. 1..6.
        #[arg(long = "sweep-M", value_name = "A..B")]
        sweep_m: String,
    },
}

fn parse_sweep_range(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = if text.contains("..=") {
        text.splitn(2, "..=").collect()
    } else {
        text.splitn(2, "..").collect()
    };
    if parts.len() == 2 {
        if let (Ok(a), Ok(b)) = (parts[0].trim().parse(), parts[1].trim().parse()) {
            return Ok((a, b));
        }
    }
    Err(CliError::Config(format!(
        "sweep-M: expected an inclusive range like 2..6, got '{text}'"
    )))
}

fn run(command: Command) -> Result<(), CliError> {
    let config_path = match &command {
        Command::Ingest { config }
        | Command::Decompose { config }
        | Command::Surrogate { config, .. }
        | Command::Detect { config }
        | Command::Report { config }
        | Command::Sweep { config, .. } => config.clone(),
    };
    let (config, bytes) = ScenarioConfig::load(&config_path)?;
    let mut ctx = RunContext::new(config, &bytes)?;

    match command {
        Command::Ingest { .. } => {
            stages::cmd_ingest(&mut ctx)?;
        }
        Command::Decompose { .. } => {
            stages::cmd_decompose(&mut ctx)?;
        }
        Command::Surrogate { dump, .. } => {
            stages::cmd_surrogate(&mut ctx, dump)?;
        }
        Command::Detect { .. } => {
            stages::cmd_detect(&mut ctx)?;
        }
        Command::Report { .. } => {
            stages::cmd_report(&mut ctx)?;
        }
        Command::Sweep { sweep_m, .. } => {
            let (from, to) = parse_sweep_range(&sweep_m)?;
            stages::cmd_sweep(&mut ctx, from, to)?;
        }
    }

    ctx.manifest.save(&ctx.run_dir)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_range_parses_inclusive_forms() {
        assert_eq!(parse_sweep_range("1..6").unwrap(), (1, 6));
        assert_eq!(parse_sweep_range("2..=4").unwrap(), (2, 4));
        assert_eq!(parse_sweep_range(" 3 .. 3 ").unwrap(), (3, 3));
        assert!(parse_sweep_range("6").is_err());
        assert!(parse_sweep_range("a..b").is_err());
    }
}
