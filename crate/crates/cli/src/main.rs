//! `bika` command-line tool.

mod commands;
mod config;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bika",
    version,
    about = "Train, export, evaluate and simulate multiply-free threshold networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON or TOML config (a run manifest also works); flags win on conflict.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train shadow parameters and write a checkpoint plus report.
    Train(commands::TrainArgs),
    /// Convert a checkpoint to an integer model and verify it exhaustively.
    Export(commands::ExportArgs),
    /// Integer-only test-set accuracy of a model file.
    Eval(commands::EvalArgs),
    /// Decompose a piecewise-constant function into thresholds.
    Decompose(commands::DecomposeArgs),
    /// Simulate a model or baseline workload on the systolic array.
    Sim(commands::SimArgs),
    /// Compare BiKA, BNN and QNN engines on one architecture.
    Compare(commands::CompareArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Export(a) => commands::export(a),
        Command::Eval(a) => commands::eval(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Sim(a) => commands::sim(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
