use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gp_select_harness::compare::{tradeoff_table, to_csv, to_table};
use gp_select_harness::experiment::write_atomic;
use gp_select_harness::{run, ExperimentConfig, LazyMode};

#[derive(Parser)]
#[command(name = "gp-select", version, about = "Budgeted item selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy and seed of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Set a config field, e.g. `policy.lambda=0.5`. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Lazy variance updates: on, off, or both for timing comparisons.
        #[arg(long, value_enum)]
        lazy: Option<LazyMode>,
    },
    /// Tabulate value and diversity across runs on the same dataset.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, mut overrides, lazy } => {
            if let Some(mode) = lazy {
                let name = match mode {
                    LazyMode::On => "on",
                    LazyMode::Off => "off",
                    LazyMode::Both => "both",
                };
                overrides.push(format!("lazy=\"{name}\""));
            }
            let config = ExperimentConfig::load(&config, &overrides)?;
            let out = run(&config)?;
            println!("wrote {}", out.display());
        }
        Command::Compare { inputs, out } => {
            let rows = tradeoff_table(&inputs)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            write_atomic(&out, to_csv(&rows).as_bytes())?;
            print!("{}", to_table(&rows));
        }
    }
    Ok(())
}
