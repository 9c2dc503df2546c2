//! Workbench for feedback scheduling of pendulum control loops sharing
//! one CPU: generate training data from the exact optimizer, fit the
//! neural approximation, co-simulate the scheduling modes, and measure
//! their decision overhead.
//!
//! Every subcommand takes a scenario file; flags only override single
//! knobs. All randomness descends from one seed, so a scenario rerun
//! reproduces its artifacts byte for byte (timing measurements
//! excepted). Failures print a one-line diagnostic and exit nonzero,
//! and artifacts are written atomically so a failed run leaves no
//! partial files.

mod commands;
mod output;
mod scenario;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use fbsched::sim::SchedMode;

#[derive(Parser)]
#[command(name = "fbsched-cli", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate exact optimal periods over the scenario's grid.
    GenData(Common),
    /// Fit the period predictor to a generated dataset.
    Train(Common),
    /// Run one scheduling experiment and log it.
    Simulate(SimulateArgs),
    /// Time the exact and neural decision paths on random loads.
    BenchOverhead(BenchArgs),
    /// Summarize the logs and benchmarks in the output directory.
    Report(Common),
    /// Retrain at several hidden-layer widths and tabulate the trade-off.
    SweepHidden(SweepArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's out_dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Scheduling mode (ols, ofs, nfs); defaults to the scenario's.
    #[arg(long)]
    mode: Option<SchedMode>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Instances to time per decision path; defaults to the scenario's.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated hidden-layer widths to try.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&ctx(c)?),
        Command::Train(c) => commands::train(&ctx(c)?),
        Command::Simulate(a) => commands::simulate(&ctx(a.common)?, a.mode),
        Command::BenchOverhead(a) => commands::bench_overhead(&ctx(a.common)?, a.runs),
        Command::Report(c) => commands::report(&ctx(c)?),
        Command::SweepHidden(a) => commands::sweep_hidden(&ctx(a.common)?, a.hidden),
    }
}

fn ctx(c: Common) -> Result<commands::Ctx> {
    commands::Ctx::new(&c.scenario, c.out, c.seed)
}
