//! Command-line front end for the certification pipelines.
//!
//! Exit codes: 0 success (and Certified for `verify`), 2 configuration or
//! parse error, 3 solver failure, 4 sufficient condition inconclusive
//! (`verify` only — distinct from failure because the condition is
//! one-sided).

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "riskcert", version, about = "Tail-risk-aware safety certification of ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Output directory for reports, plot data, and the run manifest.
    #[arg(long, global = true)]
    out: Option<std::path::PathBuf>,
    /// Seed override for sampling pipelines.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Bound on parallel solves.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Feasibility tolerance for risk-aware QC membership tests.
    #[arg(long, global = true)]
    tol_feas: Option<f64>,
    /// PSD slack tolerance for certification.
    #[arg(long, global = true)]
    tol_psd: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Worst-case CVaR of a quadratic loss over a moment ambiguity set.
    Cvar(commands::CvarArgs),
    /// Search a safety certificate for a fixed specification.
    Verify(commands::VerifyArgs),
    /// Closed-loop reachability experiment: minimum-volume safe ellipsoids.
    Reach(commands::ReachArgs),
    /// Classification robustness experiment.
    Classify(commands::ClassifyArgs),
    /// Draw moment-matched samples from a distribution family.
    Sample(commands::SampleArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Cvar(args) => commands::run_cvar(args),
        Command::Verify(args) => commands::run_verify(args),
        Command::Reach(args) => commands::run_reach(args),
        Command::Classify(args) => commands::run_classify(args),
        Command::Sample(args) => commands::run_sample(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(err.exit_code())
        }
    }
}
