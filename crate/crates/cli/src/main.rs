use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cages::harness::{export_dir, parse_grid, run_experiment, ExperimentConfig, MethodId, ProblemId, WORKERS_ENV};
use clap::{Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "cages", version, about = "Replicated local Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicates of one method on one problem and write the results.
    Run(RunArgs),
    /// Aggregate saved runs onto a cost grid.
    Export(ExportArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// rosenbrock12, cartpole, quad-dup or quad-bias
    #[arg(long)]
    problem: ProblemId,
    /// cages, gibo, ars or logei
    #[arg(long)]
    method: MethodId,
    /// Total cost budget per replicate (problem default if omitted).
    #[arg(long)]
    budget: Option<f64>,
    /// Cost spent on the random initial design (problem default if omitted).
    #[arg(long)]
    init_budget: Option<f64>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gradient step size (problem default if omitted).
    #[arg(long)]
    step_size: Option<f64>,
    /// Acquisition queries per descent step (default: problem dimension).
    #[arg(long)]
    batch: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of worker threads for replicates.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(clap::Args)]
struct ExportArgs {
    /// Directory written by `run`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Cost grid as start:stop:step.
    #[arg(long)]
    grid: String,
    /// CSV file to write.
    #[arg(long)]
    out: PathBuf,
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::new(args.problem, args.method, &args.out);
    config.replicates = args.replicates;
    config.seed = args.seed;
    if let Some(b) = args.budget {
        config.total_budget = b;
    }
    if let Some(b) = args.init_budget {
        config.optimizer.init_budget = b;
    }
    if let Some(eta) = args.step_size {
        config.optimizer.step_size = eta;
    }
    if args.batch.is_some() {
        config.optimizer.inner_batch = args.batch;
    }
    if let Some(n) = args.workers {
        // the harness reads the pool size from the environment
        std::env::set_var(WORKERS_ENV, n.to_string());
    }
    let result = run_experiment(&config).with_context(|| format!("experiment in {}", args.out.display()))?;
    let failed = result.records.iter().filter(|r| r.is_err()).count();
    let curve = &result.curve;
    let last = curve.grid.len() - 1;
    println!(
        "{} on {}: mean best {} (stderr {}) at cost {} over {} replicates{}",
        args.method,
        args.problem,
        curve.mean[last],
        curve.stderr[last],
        curve.grid[last],
        curve.replicates.len(),
        if failed > 0 { format!(", {failed} failed") } else { String::new() }
    );
    info!("results written to {}", args.out.display());
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let grid = parse_grid(&args.grid)?;
    let curve = export_dir(&args.input, &grid, &args.out)
        .with_context(|| format!("exporting {}", args.input.display()))?;
    println!(
        "wrote {} rows for {} replicates to {}",
        curve.grid.len(),
        curve.replicates.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Export(args) => export(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
