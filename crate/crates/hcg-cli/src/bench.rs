//! `hcg bench`: time the sequential and parallel pipelines plus the dense
//! oracle baseline on one graph, emitting per-phase CSV rows and the raw
//! pipeline reports as JSON.

use crate::{ensure_out_dir, load_graph_arg, write_file, write_json, CliError};
use clap::{Args, ValueEnum};
use hcg_core::drelu::{cbsr_to_dense, drelu_forward, DreluMode};
use hcg_core::graph::EdgeType;
use hcg_core::kernels::spmm_oracle;
use hcg_core::scheduler::{run_pipeline, PipelineConfig, PipelineMode, PipelineReport};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Clone, Copy, PartialEq, ValueEnum)]
pub enum ModeArg {
    Sequential,
    Parallel,
    Both,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Graph file to benchmark on.
    graph: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    /// Keep width for all three edge types.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Repetitions per mode; the summary quotes the best wall time.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Output directory for bench.csv and bench.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Serialize)]
struct DenseBaseline {
    edge_type: EdgeType,
    forward_nanos: u64,
}

#[derive(Serialize)]
struct BenchReport {
    schema_version: u32,
    k: usize,
    reps: usize,
    workers: usize,
    dense_baseline: Vec<DenseBaseline>,
    runs: Vec<PipelineReport>,
}

/// Best-of-reps dense SpMM forward per edge type on densified D-ReLU
/// outputs, the no-compression reference for speedup ratios.
fn dense_baseline(
    g: &hcg_core::HeteroGraph,
    k: usize,
    reps: usize,
) -> Result<Vec<DenseBaseline>, CliError> {
    let mut rows = Vec::with_capacity(3);
    for edge in EdgeType::ALL {
        let x = g.source_features(edge);
        let h = drelu_forward(x, k.min(x.cols()), DreluMode::Literal)?;
        let dense = cbsr_to_dense(&h);
        let mut best = u64::MAX;
        for _ in 0..reps {
            let t = Instant::now();
            let y = spmm_oracle(g.adj(edge), &dense)?;
            best = best.min(t.elapsed().as_nanos() as u64);
            std::hint::black_box(&y);
        }
        rows.push(DenseBaseline {
            edge_type: edge,
            forward_nanos: best,
        });
    }
    Ok(rows)
}

pub fn run(args: BenchArgs, workers: usize) -> Result<(), CliError> {
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be >= 1".into()));
    }
    let g = load_graph_arg(&args.graph)?;
    let modes: &[PipelineMode] = match args.mode {
        ModeArg::Sequential => &[PipelineMode::Sequential],
        ModeArg::Parallel => &[PipelineMode::Parallel],
        ModeArg::Both => &[PipelineMode::Sequential, PipelineMode::Parallel],
    };

    let mut csv = String::from("mode,rep,scope,init_nanos,forward_nanos,backward_nanos,wall_nanos\n");
    let mut runs = Vec::new();
    let mut best_wall: Vec<(PipelineMode, u64)> = Vec::new();
    for &mode in modes {
        let mut best = u64::MAX;
        for rep in 0..args.reps {
            let cfg = PipelineConfig::new(mode, workers, args.k);
            let (out, report) = run_pipeline(&g, &cfg)?;
            std::hint::black_box(&out);
            for e in &report.edges {
                writeln!(
                    csv,
                    "{},{rep},{},{},{},{},",
                    mode.as_str(),
                    e.edge_type,
                    e.init_nanos,
                    e.forward_nanos,
                    e.backward_nanos
                )
                .expect("string write");
            }
            writeln!(csv, "{},{rep},merge,,{},,", mode.as_str(), report.merge_nanos)
                .expect("string write");
            writeln!(csv, "{},{rep},total,,,,{}", mode.as_str(), report.wall_nanos)
                .expect("string write");
            best = best.min(report.wall_nanos);
            runs.push(report);
        }
        best_wall.push((mode, best));
    }

    let baseline = dense_baseline(&g, args.k, args.reps)?;
    for b in &baseline {
        writeln!(csv, "dense,0,{},,{},,", b.edge_type, b.forward_nanos).expect("string write");
    }

    ensure_out_dir(&args.out)?;
    write_file(&args.out.join("bench.csv"), &csv)?;
    write_json(
        &args.out.join("bench.json"),
        &BenchReport {
            schema_version: hcg_core::SCHEMA_VERSION,
            k: args.k,
            reps: args.reps,
            workers,
            dense_baseline: baseline,
            runs,
        },
    )?;

    for (mode, wall) in &best_wall {
        println!("{}: best wall {:.3}ms", mode.as_str(), *wall as f64 / 1e6);
    }
    if let (Some((_, seq)), Some((_, par))) = (
        best_wall.iter().find(|(m, _)| *m == PipelineMode::Sequential),
        best_wall.iter().find(|(m, _)| *m == PipelineMode::Parallel),
    ) {
        println!("parallel/sequential wall ratio: {:.3}", *par as f64 / *seq as f64);
    }
    Ok(())
}
