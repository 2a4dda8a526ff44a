//! Command-line front end: reads a TOML run configuration, executes one
//! pipeline stage per subcommand, and writes artifacts into a fixed
//! directory layout (`tensors/`, `macro/`, `dns/`, `converge/`,
//! `report.txt`). All outputs are deterministic for a fixed config.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "triscale",
    about = "Two-level homogenization of the cardiac bidomain model",
    version
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true, default_value = "triscale.toml")]
    config: PathBuf,

    /// Artifact output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads. Reserved: the solvers are currently
    /// single-threaded; any value >= 1 is accepted.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problems and report the effective tensors.
    Homogenize,
    /// Time-step the homogenized bidomain model.
    Simulate,
    /// Time-step the resolved microscopic model.
    Dns,
    /// Run the homogenization convergence study over a list of epsilons.
    Converge,
    /// Check the unfolding-operator identities on deterministic fields.
    VerifyUnfolding,
    /// Fit and verify the structural assumptions on the ionic functions.
    ValidateIonic,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        anyhow::bail!("--threads must be >= 1");
    }
    let cfg = RunConfig::load(&cli.config)?;
    std::fs::create_dir_all(&cli.out)?;
    let mut report = stages::Report::new(&cli.out);
    match cli.command {
        Command::Homogenize => stages::homogenize(&cfg, &cli.out, &mut report)?,
        Command::Simulate => stages::simulate(&cfg, &cli.out, &mut report)?,
        Command::Dns => stages::dns(&cfg, &cli.out, &mut report)?,
        Command::Converge => stages::converge(&cfg, &cli.out, &mut report)?,
        Command::VerifyUnfolding => stages::verify_unfolding(&cfg, &cli.out, &mut report)?,
        Command::ValidateIonic => stages::validate_ionic(&cfg, &cli.out, &mut report)?,
    }
    report.finish()?;
    Ok(())
}
