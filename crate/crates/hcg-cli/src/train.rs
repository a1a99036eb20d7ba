//! `hcg train`: fit the two-layer model on labeled graph files, writing the
//! checkpoint, a metrics JSON and the per-epoch loss trace.

use crate::{ensure_out_dir, load_graph_arg, write_file, write_json, CliError};
use clap::{Args, ValueEnum};
use hcg_core::drelu::DreluMode;
use hcg_core::model::{save_model, train_multi, AdamParams, MetricsReport, OptimizerKind, TrainConfig};
use hcg_core::HeteroGraph;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Clone, Copy, ValueEnum)]
pub enum DreluModeArg {
    Literal,
    Nonneg,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Labeled graph files; losses and metrics average over them.
    #[arg(required = true)]
    graphs: Vec<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Keep width of the input layer.
    #[arg(long, default_value_t = 16)]
    k_in: usize,
    /// Keep width of the hidden layer.
    #[arg(long, default_value_t = 16)]
    k_hidden: usize,
    #[arg(long, value_enum, default_value_t = DreluModeArg::Literal)]
    mode: DreluModeArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of cells per graph held out of the loss and scored instead.
    #[arg(long, default_value_t = 0.0)]
    holdout: f64,
    /// Output directory for model.bin, metrics.json and loss_trace.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Serialize)]
struct TrainReport {
    schema_version: u32,
    epochs: usize,
    eval_set: &'static str,
    initial_loss: f64,
    final_loss: f64,
    metrics: MetricsReport,
    per_graph: Vec<MetricsReport>,
}

pub fn run(args: TrainArgs, workers: usize) -> Result<(), CliError> {
    let graphs: Vec<HeteroGraph> = args
        .graphs
        .iter()
        .map(|p| load_graph_arg(p))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&HeteroGraph> = graphs.iter().collect();

    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        weight_decay: args.weight_decay,
        hidden: args.hidden,
        k_in: args.k_in,
        k_hidden: args.k_hidden,
        mode: match args.mode {
            DreluModeArg::Literal => DreluMode::Literal,
            DreluModeArg::Nonneg => DreluMode::Nonneg,
        },
        optimizer: match args.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        adam: AdamParams::default(),
        seed: args.seed,
        holdout_fraction: args.holdout,
        workers,
    };
    let outcome = train_multi(&refs, &cfg)?;

    ensure_out_dir(&args.out)?;
    save_model(&outcome.network, &args.out.join("model.bin"))?;

    let mut trace = String::from("epoch,loss\n");
    for (epoch, loss) in outcome.losses.iter().enumerate() {
        writeln!(trace, "{epoch},{loss}").expect("string write");
    }
    write_file(&args.out.join("loss_trace.csv"), &trace)?;

    let report = TrainReport {
        schema_version: hcg_core::SCHEMA_VERSION,
        epochs: args.epochs,
        eval_set: match outcome.eval_set {
            hcg_core::model::EvalSet::Train => "train",
            hcg_core::model::EvalSet::Holdout => "holdout",
        },
        initial_loss: *outcome.losses.first().unwrap_or(&f64::NAN),
        final_loss: *outcome.losses.last().unwrap_or(&f64::NAN),
        metrics: outcome.metrics.clone(),
        per_graph: outcome.per_graph,
    };
    write_json(&args.out.join("metrics.json"), &report)?;

    println!(
        "trained {} epochs on {} graph(s): loss {:.4} -> {:.4}, {} spearman {:.4}, pearson {:.4}",
        args.epochs,
        graphs.len(),
        report.initial_loss,
        report.final_loss,
        report.eval_set,
        report.metrics.spearman,
        report.metrics.pearson
    );
    Ok(())
}
