//! `hcg`: generate synthetic circuit graphs, verify kernel exactness on
//! them, profile and benchmark the sparse pipeline, and train the two-layer
//! congestion model. Subcommands are deterministic given `--seed` and flags
//! except for wall-clock fields in timing reports.

mod bench;
mod generate;
mod profile;
mod train;
mod verify;

use clap::{Parser, Subcommand};
use std::fmt;
use std::path::Path;

#[derive(Parser)]
#[command(name = "hcg", version, about = "Heterogeneous circuit graph toolkit")]
struct Cli {
    /// Worker threads for sparse kernels; falls back to HCG_WORKERS, then
    /// to the number of available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic heterograph and its stats sidecar.
    Generate(generate::GenerateArgs),
    /// Run exactness checks against a graph file; exit 1 on any failure.
    Verify(verify::VerifyArgs),
    /// Sweep D-ReLU keep widths and pick the fastest per edge type.
    ProfileK(profile::ProfileArgs),
    /// Time sequential vs parallel pipelines and the dense baseline.
    Bench(bench::BenchArgs),
    /// Train the two-layer model on one or more labeled graphs.
    Train(train::TrainArgs),
}

/// Failures mapped onto the documented exit codes: checks that did not pass
/// exit 1, bad flag values exit 2 (clap's own usage errors share it), I/O
/// failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Check(String),
    Usage(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Check(m) | CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<hcg_core::GraphError> for CliError {
    fn from(e: hcg_core::GraphError) -> Self {
        use hcg_core::GraphError::*;
        match e {
            Io(inner) => CliError::Io(inner.to_string()),
            InfeasibleSpec(m) => CliError::Usage(format!("infeasible spec: {m}")),
            other => CliError::Check(other.to_string()),
        }
    }
}

impl From<hcg_core::SchedulerError> for CliError {
    fn from(e: hcg_core::SchedulerError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<hcg_core::KernelError> for CliError {
    fn from(e: hcg_core::KernelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<hcg_core::ModelError> for CliError {
    fn from(e: hcg_core::ModelError) -> Self {
        match e {
            hcg_core::ModelError::Io(inner) => CliError::Io(inner.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// `--workers` flag, then HCG_WORKERS, then available cores.
pub fn resolve_workers(flag: Option<usize>) -> Result<usize, CliError> {
    let workers = match flag {
        Some(w) => w,
        None => match std::env::var("HCG_WORKERS") {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("HCG_WORKERS is not a count: {s:?}")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if workers == 0 {
        return Err(CliError::Usage("worker count must be >= 1".into()));
    }
    Ok(workers)
}

pub fn load_graph_arg(path: &Path) -> Result<hcg_core::HeteroGraph, CliError> {
    hcg_core::graph::load_graph(path).map_err(CliError::from)
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing {}: {e}", path.display())))?;
    write_file(path, &(body + "\n"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let workers = resolve_workers(cli.workers)?;
    match cli.command {
        Command::Generate(args) => generate::run(args),
        Command::Verify(args) => verify::run(args, workers),
        Command::ProfileK(args) => profile::run(args, workers),
        Command::Bench(args) => bench::run(args, workers),
        Command::Train(args) => train::run(args, workers),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code());
        }
    }
}
