//! `specdmd`: batch front-end for optimized DMD on gridded snapshot files.
//!
//! Every command reads a flat JSON config (optional) and flags, writes its
//! artifacts into the output directory, and on failure prints a single JSON
//! error record to stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{Command, FieldError, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "specdmd", version, about = "Optimized DMD fits, forecasts and ensembles")]
struct Cli {
    #[command(subcommand)]
    command: CommandArg,
}

#[derive(Debug, Subcommand)]
enum CommandArg {
    /// Align local time across longitudes and optionally keep daytime only
    Preprocess(Flags),
    /// Fit an optimized DMD model
    Fit(Flags),
    /// Reconstruction error against rank, with an elbow pick
    RankScan(Flags),
    /// Score a saved model on the days after its training window
    Forecast(Flags),
    /// Bagging ensemble of optimized DMD fits
    Bopdmd(Flags),
    /// Generate synthetic snapshot data
    Synth(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// Flat JSON config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    /// none, lhp or imag
    #[arg(long)]
    constraint: Option<String>,
    #[arg(long)]
    train_days: Option<usize>,
    #[arg(long)]
    forecast_days: Option<usize>,
    /// Ensemble trials
    #[arg(long = "K")]
    k: Option<usize>,
    /// Snapshots per bag
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Snapshot file base path (without the .f64/.json suffix)
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Model JSON for forecast
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {}", describe(.0))]
    Validation(Vec<FieldError>),
    #[error("cannot parse config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] specdmd_core::Error),
}

fn describe(fields: &[FieldError]) -> String {
    fields
        .iter()
        .map(|f| format!("{}: {}", f.field, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl CliError {
    fn record(&self) -> serde_json::Value {
        let (kind, fields) = match self {
            CliError::Validation(v) => ("validation", v.iter().map(|f| f.field.clone()).collect()),
            CliError::Config { .. } => ("config", vec![]),
            CliError::Io { .. } => ("io", vec![]),
            CliError::Core(e) => (e.kind(), vec![]),
        };
        json!({ "error": { "kind": kind, "message": self.to_string(), "fields": fields } })
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

fn split(cli: Cli) -> (Command, Flags) {
    match cli.command {
        CommandArg::Preprocess(f) => (Command::Preprocess, f),
        CommandArg::Fit(f) => (Command::Fit, f),
        CommandArg::RankScan(f) => (Command::RankScan, f),
        CommandArg::Forecast(f) => (Command::Forecast, f),
        CommandArg::Bopdmd(f) => (Command::Bopdmd, f),
        CommandArg::Synth(f) => (Command::Synth, f),
    }
}

fn execute(command: Command, flags: Flags) -> Result<(), CliError> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        input: flags.input,
        output: flags.output,
        model: flags.model,
        rank: flags.rank,
        constraint: flags.constraint,
        train_days: flags.train_days,
        forecast_days: flags.forecast_days,
        k: flags.k,
        p: flags.p,
        seed: flags.seed,
    });
    commands::run(command, &cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({ "error": { "kind": "usage", "message": e.to_string().trim(), "fields": [] } });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    let (command, flags) = split(cli);
    match execute(command, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code())
        }
    }
}
