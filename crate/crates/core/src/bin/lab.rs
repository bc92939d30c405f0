//! `lab run --config <path> [--only <family>] [--out <dir>]`
//!
//! Exit status: 0 when every family succeeded, 1 for invalid arguments or
//! configuration, 2 when at least one family failed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sobolev_lab::experiment::{run, ExperimentConfig, Family};
use sobolev_lab::LabError;

#[derive(Parser)]
#[command(name = "lab", version, about = "Controllability experiments for pseudo-parabolic equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment families.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run a single family regardless of the configured list.
        #[arg(long)]
        only: Option<Family>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("LAB_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(format!("LAB_THREADS: {e}")),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("LAB_THREADS must be a positive integer, got `{v}`")),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Command::Run { config, only, out } = cli.command;

    match threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    }

    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    match run(&cfg, only) {
        Ok(manifest) => {
            for r in &manifest.experiments {
                match &r.error {
                    None => eprintln!("{:<14} ok      {:>8.2}s  {} file(s)", r.family.name(), r.seconds, r.outputs.len()),
                    Some(e) => eprintln!("{:<14} FAILED  {:>8.2}s  {e}", r.family.name(), r.seconds),
                }
            }
            if manifest.all_ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e @ LabError::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
