//! Experiment runner for the allreduce simulator.
//!
//! `lanesim run` executes a sweep over topology/algorithm/count axes,
//! verifying each cell against the brute-force oracle when `--verify` is
//! given, and writes CSV/JSON reports plus optional JSON-lines traces.
//! `lanesim verify` runs the built-in oracle-equivalence and message-count
//! matrix. Exit status is nonzero iff any verification failed.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use lanesim_cli::config::ExperimentConfig;
use lanesim_cli::experiment::{run_experiment, verify_suite, MatrixFilter};

#[derive(Parser)]
#[command(name = "lanesim", version, about = "Deterministic allreduce simulator and cost model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and emit CSV/JSON reports.
    Run(RunArgs),
    /// Run the built-in verification matrix and print pass counts.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file of key=value lines (same keys as the flags below);
    /// flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Comma-separated node counts, e.g. 1,2,4
    #[arg(long)]
    nodes: Option<String>,

    /// Comma-separated GPUs per node.
    #[arg(long)]
    gpus_per_node: Option<String>,

    /// Comma-separated processes per GPU.
    #[arg(long)]
    ppg: Option<String>,

    /// Comma-separated algorithm selectors:
    /// ring,rd,rabenseifner,lane,ppg-standard,ppg-lane
    #[arg(long)]
    algorithms: Option<String>,

    /// Inner algorithm for the lane inter-node stage (ring|rd).
    #[arg(long)]
    lane_inner: Option<String>,

    /// Inner algorithm for ppg-standard (ring|rd|rabenseifner).
    #[arg(long)]
    ppg_inner: Option<String>,

    /// Comma-separated element counts; `2^k` powers are accepted.
    #[arg(long)]
    counts: Option<String>,

    /// Buffer fill generator: ones|ramp|rand.
    #[arg(long)]
    fill: Option<String>,

    /// Seed for the rand fill generator.
    #[arg(long)]
    seed: Option<u64>,

    /// Cost-model parameter file (key=value lines).
    #[arg(long)]
    cost_config: Option<PathBuf>,

    /// Single cost-model parameter override, e.g. --cost nics_per_node=4.
    /// Repeatable; applied after --cost-config.
    #[arg(long = "cost", value_name = "KEY=VALUE")]
    cost: Vec<String>,

    /// CSV output path; a JSON report is written alongside with a .json
    /// extension. Without this the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Check every cell against the brute-force oracle.
    #[arg(long)]
    verify: bool,

    /// Repeat each cell this many times, requiring byte-identical traces.
    #[arg(long)]
    repetitions: Option<usize>,

    /// Directory for per-cell JSON-lines traces.
    #[arg(long)]
    trace_out: Option<PathBuf>,

    /// Lift the default caps (counts <= 2^20, world size <= 512).
    #[arg(long)]
    uncapped: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Restrict the matrix's node axis, e.g. 1,2
    #[arg(long)]
    nodes: Option<String>,

    /// Restrict the GPUs-per-node axis.
    #[arg(long)]
    gpus_per_node: Option<String>,

    /// Restrict the processes-per-GPU axis.
    #[arg(long)]
    ppg: Option<String>,

    /// Restrict the count axis; `2^k` accepted.
    #[arg(long)]
    counts: Option<String>,

    /// Restrict the algorithms.
    #[arg(long)]
    algorithms: Option<String>,

    /// Seed for the integer fill.
    #[arg(long)]
    seed: Option<u64>,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        config.apply_file(&text)?;
    }
    let overrides: [(&str, &Option<String>); 8] = [
        ("nodes", &args.nodes),
        ("gpus-per-node", &args.gpus_per_node),
        ("ppg", &args.ppg),
        ("algorithms", &args.algorithms),
        ("lane-inner", &args.lane_inner),
        ("ppg-inner", &args.ppg_inner),
        ("counts", &args.counts),
        ("fill", &args.fill),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            config.apply(key, value)?;
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(path) = &args.cost_config {
        config.cost_config = Some(path.clone());
    }
    config.cost_overrides.extend(args.cost.iter().cloned());
    if let Some(path) = &args.out {
        config.out = Some(path.clone());
    }
    if args.verify {
        config.verify = true;
    }
    if let Some(reps) = args.repetitions {
        config.repetitions = reps;
    }
    if let Some(path) = &args.trace_out {
        config.trace_out = Some(path.clone());
    }
    if args.uncapped {
        config.uncapped = true;
    }
    config.finalize()?;
    Ok(config)
}

fn run(args: &RunArgs) -> Result<bool> {
    let config = build_config(args)?;
    let report = run_experiment(&config)?;
    match &config.out {
        None => print!("{}", report.to_csv()),
        Some(out) => eprintln!(
            "wrote {} cells to {} and {}",
            report.cells.len(),
            out.display(),
            out.with_extension("json").display()
        ),
    }
    for failure in &report.failures {
        eprintln!("verification FAILED: {failure}");
    }
    if config.verify && report.all_verified() {
        eprintln!("all {} cells verified", report.cells.len());
    }
    Ok(report.all_verified())
}

fn build_filter(args: &VerifyArgs) -> Result<MatrixFilter> {
    // Reuse the config parser so axis syntax matches `run` exactly.
    let mut probe = ExperimentConfig::default();
    let mut filter = MatrixFilter::default();
    if let Some(v) = &args.nodes {
        probe.apply("nodes", v)?;
        filter.nodes = probe.nodes.clone();
    }
    if let Some(v) = &args.gpus_per_node {
        probe.apply("gpus-per-node", v)?;
        filter.gpus_per_node = probe.gpus_per_node.clone();
    }
    if let Some(v) = &args.ppg {
        probe.apply("ppg", v)?;
        filter.ppg = probe.ppg.clone();
    }
    if let Some(v) = &args.counts {
        probe.apply("counts", v)?;
        filter.counts = probe.counts.clone();
    }
    if let Some(v) = &args.algorithms {
        probe.apply("algorithms", v)?;
        filter.algorithms = probe.resolved_algorithms();
    }
    if let Some(seed) = args.seed {
        filter.seed = seed;
    }
    Ok(filter)
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let filter = build_filter(args)?;
    let summary = verify_suite(&filter)?;
    if summary.cells == 0 {
        eprintln!("warning: 0 cells matched the filter");
        return Ok(true);
    }
    for (algorithm, passed) in &summary.per_algorithm {
        println!("{algorithm}: {passed} cells passed");
    }
    if summary.skipped > 0 {
        println!("skipped {} cells (power-of-two constraints)", summary.skipped);
    }
    for failure in &summary.failures {
        eprintln!("FAILED: {failure}");
    }
    println!(
        "{} of {} cells passed",
        summary.cells - summary.failures.len(),
        summary.cells
    );
    Ok(summary.all_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Verify(args) => verify(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
