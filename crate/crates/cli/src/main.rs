//! `fedsurv`: federated surge-detection experiments from the command line.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "fedsurv",
    version,
    about = "Federated surge detection with combined p-values"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random stream (default 0, never the clock).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact surge test on a count series.
    Test(commands::test::TestArgs),
    /// Combine p-values with one or more methods.
    Combine(commands::combine::CombineArgs),
    /// Monte Carlo power curves with calibrated thresholds.
    PowerCurve(commands::power::PowerArgs),
    /// Semi-synthetic recall and F1 sweeps.
    Semisynth(commands::semisynth::SemisynthArgs),
    /// Simulate the federated protocol and report combined alarms.
    Federation(commands::federation::FederationArgs),
    /// Precision/recall of a p-value series against true alarms.
    Evaluate(commands::evaluate::EvaluateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test(a) => commands::test::run(a),
        Command::Combine(a) => commands::combine::run(a),
        Command::PowerCurve(a) => commands::power::run(a),
        Command::Semisynth(a) => commands::semisynth::run(a),
        Command::Federation(a) => commands::federation::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedsurv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
