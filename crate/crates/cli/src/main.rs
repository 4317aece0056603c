use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "maxent", version, about = "Maximum-entropy densities from moment constraints")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Quadrature family. Overrides the rule stored in a problem file.
    #[arg(long, global = true, value_enum)]
    pub quad: Option<QuadKind>,
    /// Sparse grid level.
    #[arg(long, global = true)]
    pub level: Option<u32>,
    /// Points per axis of the uniform grid.
    #[arg(long, global = true)]
    pub grid_per_axis: Option<usize>,
    /// Initial scalar Newton tolerance.
    #[arg(long, global = true)]
    pub tol1: Option<f64>,
    /// Predictor (acceptance) tolerance.
    #[arg(long, global = true)]
    pub tol2: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_min: Option<f64>,
    /// Seed for the deflation vectors.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub order_mode: Option<OrderArg>,
    /// Solver configuration as JSON; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Evaluate without the thread pool.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum QuadKind {
    Sparse,
    Uniform,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Canonical,
    Convexity,
    User,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Ebe,
    Newton,
    NewtonDamped,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Empirical moments of a CSV sample file, written as a problem JSON.
    Moments {
        #[arg(long)]
        input: PathBuf,
        /// Maximum total order of the monomial basis.
        #[arg(long)]
        order: u32,
        #[arg(long)]
        output: PathBuf,
    },
    /// Solve a problem JSON; writes the report, a trace and a manifest.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, value_enum, default_value = "ebe")]
        method: Method,
        #[arg(long)]
        output: PathBuf,
        /// Trace file; defaults to `<output>.trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate a solved density on a regular grid.
    Eval {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 101)]
        points_per_axis: usize,
        /// Grid and density in the original data units.
        #[arg(long)]
        original: bool,
        /// Also write one-dimensional marginals to `<output>.marginal<k>.csv`.
        #[arg(long)]
        marginal: bool,
    },
    /// Run EBE and both Newton variants on one problem.
    Compare {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
