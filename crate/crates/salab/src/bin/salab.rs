use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use salab::cli::{load_config, run_experiment, CliError, Experiment, ExperimentConfig, RunOptions};

/// Stochastic approximation experiments: simulations, bound curves, audits,
/// tail fits and proof-machinery checks.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ensemble quantile envelope of ‖x_k − x*‖² next to the matching bound.
    Simulate(Common),
    /// Bound curves only, no simulation.
    Bounds(Common),
    /// Violation audit of the maximal bound (and the almost-sure bound).
    Audit(Common),
    /// Tail-exponent fit of the rescaled error at k = k_max.
    Tailfit(Common),
    /// Exact MGF sequence, divergence certificate and envelope of the
    /// heavy-tailed counterexample.
    #[command(alias = "hard_example")]
    HardExample(Common),
    /// Monte Carlo checks of the MGF recursion and the supermartingale.
    #[command(alias = "verify_machinery")]
    VerifyMachinery(Common),
    /// Q-learning (or TD) audit with the iterate-bound invariant.
    #[command(alias = "rl_demo")]
    RlDemo(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; the recipe defaults are used when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run even if the stepsize conditions fail (recorded in the manifest).
    #[arg(long)]
    force: bool,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides run.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (experiment, args) = match cli.command {
        Command::Simulate(a) => (Experiment::Simulate, a),
        Command::Bounds(a) => (Experiment::Bounds, a),
        Command::Audit(a) => (Experiment::Audit, a),
        Command::Tailfit(a) => (Experiment::Tailfit, a),
        Command::HardExample(a) => (Experiment::HardExample, a),
        Command::VerifyMachinery(a) => (Experiment::VerifyMachinery, a),
        Command::RlDemo(a) => (Experiment::RlDemo, a),
    };
    let config = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default_for(experiment),
    };
    if config.experiment != experiment {
        return Err(CliError::Schema(format!(
            "configuration is for `{}`, not `{}`",
            config.experiment.as_str(),
            experiment.as_str()
        ))
        .into());
    }
    if args.print_config {
        println!("{}", serde_json::to_string_pretty(&config).context("serialising the configuration")?);
        return Ok(());
    }
    let opts = RunOptions {
        force: args.force,
        workers: args.workers,
        seed: args.seed,
        output_dir: std::env::var_os("OUTPUT_DIR").map(PathBuf::from),
    };
    let summary = run_experiment(&config, &opts)?;
    if summary.forced {
        eprintln!("warning: stepsize conditions fail; results were produced under --force");
    }
    println!("{}: {}", experiment.as_str(), summary.headline);
    println!("wrote {} to {}", summary.files.join(", "), summary.directory.display());
    Ok(())
}
