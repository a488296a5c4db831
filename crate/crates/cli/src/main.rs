//! `superatom run <config>` and `superatom validate <config>`.

mod config;
mod output;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use runner::CliError;

pub const THREADS_ENV: &str = "SUPERATOM_THREADS";

#[derive(Parser)]
#[command(name = "superatom", version, about = "Rydberg superatom STIRAP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write CSVs plus manifest.json.
    Run { config: PathBuf },
    /// Check the configuration and print effective parameters.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            print!("{}", runner::validate_report(&cfg)?);
        }
        Command::Run { config } => {
            init_threads()?;
            let cfg = load(&config)?;
            let outcome = runner::run(&cfg, &config)?;
            for f in &outcome.files {
                println!("{}", cfg.output_dir.join(f).display());
            }
            println!("{}", outcome.manifest_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("superatom: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
