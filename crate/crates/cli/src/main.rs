//! `rbayes`: simulate RB datasets, fit them, plan sequence re-use and
//! diagnose chains.
//!
//! Exit codes: 0 success, 1 inference warning or failure, 2 user error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod diagnose;
mod fit;
mod output;
mod plan;
mod simulate;

#[derive(Parser, Debug)]
#[command(name = "rbayes", version, about = "Bayesian inference for randomized benchmarking")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "RBAYES_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a binomial dataset (JSON lines).
    Simulate(simulate::SimulateArgs),
    /// Sample a posterior or run a frequentist fit.
    Fit(fit::FitArgs),
    /// Plan sequence re-use for a shot budget.
    Plan(plan::PlanArgs),
    /// Convergence diagnostics and survival-distribution summaries of chains.
    Diagnose(diagnose::DiagnoseArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Rb,
    Irb,
    Unitarity,
    Dihedral,
    Lrb,
}

impl Protocol {
    pub fn spec(self) -> rbayes::Result<rbayes::protocols::ProtocolSpec> {
        use rbayes::protocols::{ProtocolId, ProtocolSpec};
        ProtocolSpec::from_id(match self {
            Protocol::Rb => ProtocolId::Rb,
            Protocol::Irb => ProtocolId::Irb,
            Protocol::Unitarity => ProtocolId::Unitarity,
            Protocol::Dihedral => ProtocolId::Dihedral,
            Protocol::Lrb => ProtocolId::Lrb,
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct OutDir {
    /// Directory for all output files (created if missing).
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    /// Results were written but need attention (divergences, poor mixing,
    /// failed refits).
    Warning(String),
}

/// Errors in the user's input rather than in the computation.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UserError>().is_some() || err.downcast_ref::<std::io::Error>().is_some() {
        return 2;
    }
    match err.downcast_ref::<rbayes::Error>() {
        Some(rbayes::Error::Sampler(_) | rbayes::Error::Optimizer(_) | rbayes::Error::InternalConsistency(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Plan(a) => plan::run(a),
        Command::Diagnose(a) => diagnose::run(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Warning(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
