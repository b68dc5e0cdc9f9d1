//! `seqcv`: regenerate the figure and table data of the sequential
//! teleportation / unsharp detection study, or run single configurations.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 infeasible
//! request (a JSON body describing it is still written).

mod commands;
mod config;
mod table;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use commands::Target;
use config::{Format, Params};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] seqcv::Error),
    #[error("infeasible")]
    Infeasible(Value),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Parser, Debug)]
#[command(name = "seqcv", version, about)]
struct Cli {
    /// JSON file of parameters (kebab-case keys); flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    params: Params,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit the data behind one figure or table
    Repro {
        #[arg(value_enum)]
        target: Target,
    },
    /// Equal-fidelity or equal-transmissivity schedule
    TeleportPlan,
    /// Monte-Carlo teleportation of a coherent state through one round
    TeleportSim,
    /// Sequential unsharp detection: equal-ζ chain or explicit ω² list
    EntangleSeq,
    /// Error of the ζ estimator against sample count
    SampleScaling,
}

fn render(out: &commands::Output, format: Option<Format>) -> Result<String, CliError> {
    match format.unwrap_or(out.default_format) {
        Format::Csv => out
            .table
            .as_ref()
            .map(|t| t.to_csv())
            .ok_or_else(|| CliError::Validation("no CSV form for this output".into())),
        Format::Json => Ok(json_text(&out.json)),
    }
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

fn emit(text: &str, path: &Option<PathBuf>) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let params = match &cli.config {
        Some(path) => cli.params.merge(Params::load(path)?),
        None => cli.params,
    };
    let result = match cli.command {
        Command::Repro { target } => commands::repro(target, &params),
        Command::TeleportPlan => commands::teleport_plan(&params),
        Command::TeleportSim => commands::teleport_sim(&params),
        Command::EntangleSeq => commands::entangle_seq(&params),
        Command::SampleScaling => commands::sample_scaling(&params),
    };
    match result {
        Ok(out) => {
            let text = render(&out, params.format)?;
            emit(&text, &params.out)?;
            Ok(())
        }
        Err(CliError::Infeasible(body)) => {
            emit(&json_text(&body), &params.out)?;
            Err(CliError::Infeasible(body))
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Infeasible(_)) => ExitCode::from(3),
        Err(e @ (CliError::Validation(_) | CliError::Model(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Io(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
