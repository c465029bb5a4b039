//! `hornn-lab`: cost reports, gradient checks, lag curves, training and
//! evaluation for high-order recurrent networks.

mod check;
mod config;
mod cost;
mod data;
mod error;
mod output;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "hornn-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recurrent-layer parameter counts.
    Count(cost::CostArgs),
    /// Multiply-adds per frame, with the projection saving.
    Flops(cost::CostArgs),
    /// Compare BPTT gradients with central differences.
    Gradcheck(check::GradcheckArgs),
    /// Gradient norm against lag, with fitted decay rates.
    Lagcurve(check::LagcurveArgs),
    /// Train a model from a JSON experiment config.
    Train(train::TrainArgs),
    /// Frame accuracy and cross-entropy of a saved model.
    Eval(train::EvalArgs),
    /// Write a synthetic task as FSQ1 files plus a manifest.
    GenData(data::GenDataArgs),
}

/// Options shared by every command that writes files.
#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HORNN_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("HORNN_LAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Count(a) => cost::run(&a, false),
        Command::Flops(a) => cost::run(&a, true),
        Command::Gradcheck(a) => check::gradcheck(&a),
        Command::Lagcurve(a) => check::lagcurve(&a),
        Command::Train(a) => train::train(&a),
        Command::Eval(a) => train::eval(&a),
        Command::GenData(a) => data::gen_data(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hornn-lab: {e}");
            e.exit_code()
        }
    }
}
