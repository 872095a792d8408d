//! `obsctl <command> --config <file> [--p <float>] [--out <dir>] [--seed <int>]`
//!
//! Exit status: 0 when every result is certified, 2 when results were
//! produced with warnings, 1 on error.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{parse_config, Command};

#[derive(Debug, Parser)]
#[command(
    name = "obsctl",
    version,
    about = "Obstacle problems and their optimal control on uniform grids"
)]
struct Cli {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Exponent override: a number greater than 1, or `inf`.
    #[arg(long)]
    p: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(run::EXIT_ERROR as u8);
        }
    };
    let mut cfg = match parse_config(&text, Some(cli.command)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(run::EXIT_ERROR as u8);
        }
    };
    if let Err(e) = cfg.apply_overrides(cli.p.as_deref(), cli.out, cli.seed) {
        eprintln!("error: {e}");
        return ExitCode::from(run::EXIT_ERROR as u8);
    }
    ExitCode::from(run::run(&cfg) as u8)
}
