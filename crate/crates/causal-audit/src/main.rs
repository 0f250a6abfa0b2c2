//! Command-line front end for the causal audit.
//!
//! `causal-audit analyze deployment.proto --log run.json --norms norms.proto`
//! loads the deployed thread programs, replays the recorded run, finds the
//! minimal causes of the property violation, classifies the implicated
//! threads against their norms, and prints the JSON report to stdout.
//!
//! Exit status: 0 when nothing violated, 2 when a violation was confirmed
//! and explained, 1 on errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use causal_core::cause::SearchMode;
use causal_core::label::{log_from_json, Log};
use causal_core::lang::Protocol;
use causal_core::parse::parse_protocol;
use causal_core::report::{run_analysis, AnalysisOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "causal-audit",
    version,
    about = "Explains which recorded actions actually caused a protocol violation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain a violating run, audit norm compliance, or both.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Protocol file declaring the deployed threads and the property.
    protocol: PathBuf,

    /// File with the programs the threads were supposed to run.
    #[arg(long)]
    norms: Option<PathBuf>,

    /// Recorded run to explain (JSON: a label array or per-thread
    /// projections).
    #[arg(long)]
    log: Option<PathBuf>,

    /// Report every minimal cause, or settle for one per Lamport cause.
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,

    /// Partial-order reduction for the compliant-runs search.
    #[arg(long, value_enum, default_value_t = PorArg::On)]
    por: PorArg,

    /// Node budget for each exhaustive search.
    #[arg(long, default_value_t = 2_000_000)]
    budget: u64,

    /// Worker threads for candidate checks (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,

    /// Write the report to this file as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum PorArg {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::from(2),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_protocol(path: &Path) -> Result<Protocol> {
    let src =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_protocol(&src).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    let Command::Analyze(args) = cli.command;
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build_global()
        .context("setting up the worker pool")?;

    let protocol = load_protocol(&args.protocol)?;
    let names = protocol.thread_names();

    let norms = args
        .norms
        .as_deref()
        .map(|p| load_protocol(p).map(|p| p.threads))
        .transpose()?;

    let log: Option<Log> = args
        .log
        .as_deref()
        .map(|path| -> Result<Log> {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            log_from_json(&value, &names)
                .with_context(|| format!("interpreting {}", path.display()))
        })
        .transpose()?;

    let opts = AnalysisOptions {
        mode: match args.mode {
            ModeArg::Exact => SearchMode::Exact,
            ModeArg::Greedy => SearchMode::Greedy,
        },
        por: matches!(args.por, PorArg::On),
        budget: args.budget,
        ..Default::default()
    };

    let analysis = run_analysis(&protocol, norms.as_deref(), log.as_ref(), &opts)?;
    let text = serde_json::to_string_pretty(&analysis.report)?;
    println!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, format!("{text}\n"))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(analysis.violated)
}
