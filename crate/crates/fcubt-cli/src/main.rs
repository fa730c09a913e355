//! `fcubt`: model-based clustering of multivariate functional data with
//! unsupervised binary trees.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use fcubt_cli::commands::{
    self, parse_ncomp, EvalArgs, FitArgs, PredictArgs, SimulateArgs,
};
use fcubt_cli::harness::{self, BenchOptions};
use fcubt_core::Truncation;

#[derive(Parser)]
#[command(
    name = "fcubt",
    about = "Model-based clustering of functional data with unsupervised binary trees",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulation scenario as a curve CSV
    Simulate(SimulateArgs),
    /// Smooth, grow and join: fit a clustering model to a curve CSV
    Fit(FitArgs),
    /// Classify new curves with a fitted model
    Predict(PredictArgs),
    /// Adjusted Rand Index between two labelings
    Eval(EvalArgs),
    /// Seeded replications of simulate + fit (+ predict)
    Bench(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Scenario number (1, 2 or 3)
    #[arg(long)]
    scenario: u8,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Sample size (model-selection mode)
    #[arg(long, conflicts_with_all = ["n0", "n1"])]
    n: Option<usize>,
    /// Learning-set size (prediction mode, with --n1)
    #[arg(long, requires = "n1")]
    n0: Option<usize>,
    /// Online-set size (prediction mode, with --n0)
    #[arg(long, requires = "n0")]
    n1: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Concurrent replications
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "0.95", value_parser = parse_ncomp)]
    ncomp: Truncation,
    #[arg(long, default_value_t = 5)]
    kmax: usize,
    #[arg(long, default_value_t = 10)]
    minsize: usize,
    /// Output CSV (per-replication rows, config echo in comments)
    #[arg(long)]
    out: PathBuf,
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => commands::cmd_simulate(&args),
        Command::Fit(args) => commands::cmd_fit(&args),
        Command::Predict(args) => commands::cmd_predict(&args),
        Command::Eval(args) => commands::cmd_eval(&args),
        Command::Bench(args) => {
            let opts = BenchOptions {
                scenario: args.scenario,
                reps: args.reps,
                n: args.n,
                n0: args.n0,
                n1: args.n1,
                seed: args.seed,
                jobs: args.jobs,
                ncomp: args.ncomp,
                k_max: args.kmax,
                minsize: args.minsize,
            };
            let report = harness::run_bench(&opts)?;
            harness::write_report(&args.out, &report)?;
            print!("{}", report.summary);
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
