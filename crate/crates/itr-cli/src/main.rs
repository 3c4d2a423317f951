mod commands;
mod config;
mod csvio;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Learn and evaluate individualized treatment rules from two randomized
/// trials sharing a comparator arm.
#[derive(Parser)]
#[command(name = "itr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation experiment from a config file and write RMSE/bias tables.
    Simulate {
        /// TOML config with [scenario], and optionally [tuning] and [io] sections.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's io.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's replication count.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit rules for two trial CSV files and write rule + report JSON.
    Fit {
        study1: PathBuf,
        study2: PathBuf,
        /// Optional TOML config for grids and kernel settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["sepl", "intls", "intlf"], default_value = "sepl")]
        method: String,
        #[arg(long, value_parser = ["linear", "rbf"], default_value = "linear")]
        kernel: String,
        /// Force covariate standardization (default: off for linear, on for RBF).
        #[arg(long)]
        standardize: bool,
        #[arg(long, default_value = "0")]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Score a data CSV with a fitted rule JSON.
    Predict {
        rule: PathBuf,
        data: PathBuf,
        /// Output CSV path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a fitted rule on trial data or against a known scenario.
    Evaluate {
        rule: PathBuf,
        /// Trial CSV (for ipw/aipwe) — omit when evaluating against a scenario.
        data: Option<PathBuf>,
        #[arg(long, value_parser = ["ipw", "aipwe", "true"], default_value = "ipw")]
        estimator: String,
        /// Scenario config (required for --estimator true).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Study to evaluate under the scenario (1 or 2).
        #[arg(long, default_value = "1")]
        study: usize,
        #[arg(long, default_value = "0")]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Simulate { config, out, reps, seed } => {
            commands::simulate(&config, out.as_deref(), reps, seed)
        }
        Command::Fit { study1, study2, config, method, kernel, standardize, seed, out } => {
            commands::fit(&study1, &study2, config.as_deref(), &method, &kernel, standardize, seed, &out)
        }
        Command::Predict { rule, data, out } => commands::predict(&rule, &data, out.as_deref()),
        Command::Evaluate { rule, data, estimator, config, study, seed, out } => commands::evaluate(
            &rule,
            data.as_deref(),
            &estimator,
            config.as_deref(),
            study,
            seed,
            out.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
