//! `calreg`: train, evaluate and compare calibrated regressors from CSV data.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;
mod error;
mod protocol;

use clap::{Parser, Subcommand};

use commands::{CompareArgs, PdpArgs};
use config::RunArgs;

#[derive(Debug, Parser)]
#[command(
    name = "calreg",
    version,
    about = "Calibrated deep regression with prediction intervals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one method with cross-validation and write a run directory.
    Train(RunArgs),
    /// Re-evaluate the checkpoints of an existing run.
    Evaluate(RunArgs),
    /// Train (or reload) several methods and tabulate their metrics.
    Compare(CompareArgs),
    /// Partial dependence of one feature with interval bands.
    Pdp(PdpArgs),
    /// Pooled calibration curve of an existing run.
    CalibrationCurve(RunArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Pdp(a) => commands::pdp(a),
        Command::CalibrationCurve(a) => commands::calibration(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
