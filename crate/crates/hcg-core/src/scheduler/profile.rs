//! Keep-width profiling: time init + forward + backward per edge type over
//! a candidate sweep and pick the fastest width per edge.

use std::hint::black_box;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_partition_plan, bucket_rows, default_k_by_bucket_for, DEFAULT_THRESHOLDS};
use crate::drelu::{drelu_forward, DreluMode};
use crate::error::SchedulerError;
use crate::graph::{EdgeType, HeteroGraph};
use crate::kernels::{dr_spmm_backward, dr_spmm_forward, LayerTape};
use crate::SCHEMA_VERSION;

/// One timed repetition of one `(edge type, k)` cell of the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSample {
    pub edge_type: EdgeType,
    pub k: usize,
    pub rep: usize,
    pub init_nanos: u64,
    pub fwd_nanos: u64,
    pub bwd_nanos: u64,
}

/// Median total runtime of one candidate width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KRuntime {
    pub k: usize,
    pub median_total_nanos: u64,
}

/// Profiling outcome for one edge type: the fastest width and the medians
/// it was chosen from, in ascending `k` order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeKChoice {
    pub edge_type: EdgeType,
    pub chosen_k: usize,
    pub runtimes: Vec<KRuntime>,
}

/// Per-edge-type keep-width choices for one graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KProfile {
    pub schema_version: u32,
    pub reps: usize,
    pub workers: usize,
    pub edges: Vec<EdgeKChoice>,
}

impl KProfile {
    pub fn chosen_k(&self, edge: EdgeType) -> Option<usize> {
        self.edges
            .iter()
            .find(|e| e.edge_type == edge)
            .map(|e| e.chosen_k)
    }
}

fn median(sorted: &mut [u64]) -> u64 {
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

/// Times init (top-k selection), forward and backward per candidate width
/// for every edge type, taking each forward output as its own upstream
/// gradient, and picks the width with the smallest median total. Ties go to
/// the smaller width. Candidates wider than an operand are skipped for that
/// edge type; a graph structure is planned once per edge type and shared by
/// the whole sweep since the task split does not depend on `k`.
pub fn profile_k(
    g: &HeteroGraph,
    candidates: &[usize],
    reps: usize,
    workers: usize,
) -> Result<(KProfile, Vec<SweepSample>), SchedulerError> {
    if reps < 3 {
        return Err(SchedulerError::BadConfig(format!(
            "reps must be >= 3, got {reps}"
        )));
    }
    if workers == 0 {
        return Err(SchedulerError::BadConfig("workers must be >= 1".into()));
    }
    if candidates.is_empty() {
        return Err(SchedulerError::NoFeasibleK("empty candidate list".into()));
    }

    let mut samples = Vec::new();
    let mut edges = Vec::with_capacity(3);
    for edge in EdgeType::ALL {
        let adj = g.adj(edge);
        let adj_t = g.adj_t(edge);
        let source = g.source_features(edge);
        let dim = source.cols();

        let mut feasible: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&k| (1..=dim).contains(&k))
            .collect();
        feasible.sort_unstable();
        feasible.dedup();
        if feasible.is_empty() {
            return Err(SchedulerError::NoFeasibleK(format!(
                "no candidate in 1..={dim} for {edge}"
            )));
        }

        let buckets = bucket_rows(adj, DEFAULT_THRESHOLDS)?;
        let plan = build_partition_plan(&buckets, default_k_by_bucket_for(dim)?, dim)?;

        let mut runtimes = Vec::with_capacity(feasible.len());
        for &k in &feasible {
            let mut totals = Vec::with_capacity(reps);
            for rep in 0..reps {
                let t0 = Instant::now();
                let cbsr = Arc::new(drelu_forward(source, k, DreluMode::Literal)?);
                let init_nanos = t0.elapsed().as_nanos() as u64;

                let t1 = Instant::now();
                let y = dr_spmm_forward(adj, &cbsr, &plan, workers)?;
                let fwd_nanos = t1.elapsed().as_nanos() as u64;

                let mut tape = LayerTape::default();
                tape.record(edge, Arc::clone(&cbsr), adj);
                let t2 = Instant::now();
                let grad = dr_spmm_backward(adj_t, &y, &tape, edge, workers)?;
                let bwd_nanos = t2.elapsed().as_nanos() as u64;
                black_box(&grad);

                totals.push(init_nanos + fwd_nanos + bwd_nanos);
                samples.push(SweepSample {
                    edge_type: edge,
                    k,
                    rep,
                    init_nanos,
                    fwd_nanos,
                    bwd_nanos,
                });
            }
            runtimes.push(KRuntime {
                k,
                median_total_nanos: median(&mut totals),
            });
        }

        let chosen_k = runtimes
            .iter()
            .min_by(|a, b| {
                a.median_total_nanos
                    .cmp(&b.median_total_nanos)
                    .then(a.k.cmp(&b.k))
            })
            .map(|r| r.k)
            .expect("feasible set is non-empty");
        edges.push(EdgeKChoice {
            edge_type: edge,
            chosen_k,
            runtimes,
        });
    }

    Ok((
        KProfile {
            schema_version: SCHEMA_VERSION,
            reps,
            workers,
            edges,
        },
        samples,
    ))
}
