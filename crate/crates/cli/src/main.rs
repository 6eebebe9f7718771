//! Command-line driver: multi-seed policy comparisons, the finite-chain
//! oracle, and quantizer calibration tables.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nacfl::harness::output::{
    calibration_csv, emit_oracle_outputs, emit_outputs, summary_text,
};
use nacfl::harness::{run_experiment, run_oracle, ExperimentConfig, OracleConfig, WorkloadConfig};
use nacfl::quantizer::calibrate;

#[derive(Parser)]
#[command(
    name = "nacfl",
    about = "Wall-clock simulator for federated learning under network-adaptive compression",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed policy comparison from a JSON config.
    ///
    /// Every policy under a given seed sees the identical congestion path;
    /// training noise is independent per policy. The reported gain of a
    /// policy is the mean over seeds of (policy time / reference time) - 1,
    /// in percent, paired by seed; the reference is the adaptive policy.
    Simulate(SimulateArgs),
    /// Compute the optimal stationary policy on a finite chain, trace the
    /// achievable frontier, and optionally integrate the fluid trajectory
    /// and run the constant-step convergence check.
    Oracle(OracleArgs),
    /// Measure the quantizer's empirical variance table for a dimension and
    /// write it as CSV (columns: b, q).
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Directory with the four standard MNIST IDX files; overrides the
    /// config; MNIST_DIR is the fallback.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Stratified train-set fraction; overrides the config.
    #[arg(long)]
    subsample: Option<f64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// JSON oracle config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Vector dimension to calibrate at.
    #[arg(long)]
    dim: usize,
    /// Monte Carlo trials per bit-width.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Oracle(args) => oracle(args),
        Command::Calibrate(args) => calibrate_cmd(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let json = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&json)?;
    if let WorkloadConfig::Mnist {
        mnist_dir,
        subsample,
        ..
    } = &mut cfg.workload
    {
        if args.mnist_dir.is_some() {
            *mnist_dir = args.mnist_dir.clone();
        }
        if let Some(fraction) = args.subsample {
            *subsample = fraction;
        }
    }
    if args.out_dir.is_some() {
        cfg.out_dir = args.out_dir.clone();
    }
    cfg.validate()?;
    let results = run_experiment(&cfg)?;
    print!("{}", summary_text(&results.summary, &results.reference));
    if let Some(dir) = &cfg.out_dir {
        let files = emit_outputs(&results, dir)?;
        eprintln!("wrote {} files under {}", files.len(), dir.display());
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let json = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = OracleConfig::from_json(&json)?;
    if args.out_dir.is_some() {
        cfg.out_dir = args.out_dir.clone();
    }
    let report = run_oracle(&cfg)?;
    println!(
        "optimal proxy point: r = {}, d = {}, t_hat = {}",
        report.optimal_point.rounds_cost, report.optimal_point.duration, report.optimal_proxy_time
    );
    if let Some((end, rel)) = &report.ffw_end {
        println!(
            "fluid trajectory end: r = {}, d = {} (relative distance {rel:.3e})",
            end.rounds_cost, end.duration
        );
    }
    if let Some(check) = &report.check {
        println!(
            "convergence check: {:.1}% of trials within radius (max deviation {:.3e})",
            100.0 * check.fraction_within,
            check.max_rel_deviation
        );
    }
    if let Some(dir) = &cfg.out_dir {
        let files = emit_oracle_outputs(&report, dir)?;
        eprintln!("wrote {} files under {}", files.len(), dir.display());
    }
    Ok(())
}

fn calibrate_cmd(args: CalibrateArgs) -> Result<()> {
    anyhow::ensure!(args.dim >= 1, "--dim must be >= 1");
    anyhow::ensure!(args.trials >= 1000, "--trials must be >= 1000");
    let vmap = calibrate(args.dim, args.trials, args.seed);
    let csv = calibration_csv(&vmap);
    match &args.out {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
