//! `hcg verify`: load a graph file and run the exactness suites against it
//! at reduced dims. Prints one line per check to stderr, emits the JSON
//! report on stdout, and exits 1 unless every check passed.

use crate::{load_graph_arg, write_json, CliError};
use clap::Args;
use hcg_core::dense::{max_rel_error, DenseMatrix};
use hcg_core::drelu::{cbsr_to_dense, drelu_forward, DreluConfig, DreluMode};
use hcg_core::graph::{validate, EdgeType, HeteroGraph};
use hcg_core::kernels::{dr_spmm_backward, dr_spmm_forward, spmm_oracle, LayerTape};
use hcg_core::model::{mse_loss, Network};
use hcg_core::scheduler::{
    bucket_rows, build_partition_plan, default_k_by_bucket_for, DEFAULT_THRESHOLDS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::PathBuf;
use std::sync::Arc;

const ORACLE_TOL: f64 = 1e-9;
const ADJOINT_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
/// Absolute slack under which a coordinate counts as matched regardless of
/// its magnitude; central differences carry an `eps * loss / step` rounding
/// floor near 1e-11 that would otherwise dominate tiny gradients.
const FD_ATOL: f64 = 1e-8;
/// Feature columns used by the kernel checks; keeps verify sub-second on
/// preset-scale graphs.
const MAX_KERNEL_DIM: usize = 16;
/// Feature columns used by the finite-difference check.
const MAX_FD_DIM: usize = 6;
/// Upper bound on finite-difference probes across parameters and inputs.
const MAX_FD_PROBES: usize = 600;

#[derive(Args)]
pub struct VerifyArgs {
    /// Graph file to check.
    graph: PathBuf,
    /// Also finite-difference the full two-layer network on this graph.
    #[arg(long)]
    fd_check: bool,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Serialize)]
struct CheckReport {
    name: &'static str,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_rel_error: Option<f64>,
    detail: String,
}

#[derive(Serialize)]
struct VerifyReport {
    schema_version: u32,
    graph: String,
    workers: usize,
    passed: bool,
    checks: Vec<CheckReport>,
}

fn push(checks: &mut Vec<CheckReport>, c: CheckReport) {
    eprintln!(
        "{} {}: {}",
        if c.passed { "[ok]" } else { "[FAIL]" },
        c.name,
        c.detail
    );
    checks.push(c);
}

/// At most `max_cols` columns of `m`, zero-padded up to three columns so
/// the three-way bucket plans stay feasible on very narrow graphs.
fn truncate_cols(m: &DenseMatrix, max_cols: usize) -> DenseMatrix {
    let cols = m.cols().min(max_cols).max(3);
    let mut out = DenseMatrix::zeros(m.rows(), cols);
    for r in 0..m.rows() {
        for c in 0..cols.min(m.cols()) {
            out.set(r, c, m.get(r, c));
        }
    }
    out
}

/// The graph with features truncated to at most `max_cols` columns.
fn reduced(g: &HeteroGraph, max_cols: usize) -> HeteroGraph {
    HeteroGraph::new(
        truncate_cols(g.x_cell(), max_cols),
        truncate_cols(g.x_net(), max_cols),
        g.adj(EdgeType::Pins).clone(),
        g.adj(EdgeType::Pinned).clone(),
        g.adj(EdgeType::Near).clone(),
        g.labels().map(|l| l.to_vec()),
    )
}

fn structure_check(g: &HeteroGraph) -> CheckReport {
    let violations = validate(g);
    CheckReport {
        name: "structure",
        passed: violations.is_empty(),
        max_rel_error: None,
        detail: if violations.is_empty() {
            "adjacencies, transposes, features and labels well formed".into()
        } else {
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        },
    }
}

fn oracle_check(g: &HeteroGraph, workers: usize) -> Result<CheckReport, CliError> {
    let mut worst = 0.0f64;
    let mut products = 0usize;
    for edge in EdgeType::ALL {
        let a = g.adj(edge);
        let x = g.source_features(edge);
        for k in [2usize, 4, 8] {
            let k = k.min(x.cols());
            let h = drelu_forward(x, k, DreluMode::Literal)?;
            let buckets = bucket_rows(a, DEFAULT_THRESHOLDS)?;
            let plan = build_partition_plan(&buckets, default_k_by_bucket_for(h.dim())?, h.dim())?;
            let got = dr_spmm_forward(a, &h, &plan, workers)?;
            let want = spmm_oracle(a, &cbsr_to_dense(&h))?;
            worst = worst.max(max_rel_error(&got, &want));
            products += 1;
        }
    }
    Ok(CheckReport {
        name: "oracle_equivalence",
        passed: worst <= ORACLE_TOL,
        max_rel_error: Some(worst),
        detail: format!("{products} products, max rel err {worst:.3e} (tol {ORACLE_TOL:.0e})"),
    })
}

fn adjoint_check(g: &HeteroGraph, workers: usize) -> Result<CheckReport, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
    let mut worst = 0.0f64;
    for edge in EdgeType::ALL {
        let a = g.adj(edge);
        let x = g.source_features(edge);
        let k = 4.min(x.cols());
        let h = Arc::new(drelu_forward(x, k, DreluMode::Literal)?);
        let buckets = bucket_rows(a, DEFAULT_THRESHOLDS)?;
        let plan = build_partition_plan(&buckets, default_k_by_bucket_for(h.dim())?, h.dim())?;
        let y = dr_spmm_forward(a, &h, &plan, workers)?;

        let dy_data = (0..y.rows() * y.cols())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let dy = DenseMatrix::from_vec(y.rows(), y.cols(), dy_data)
            .expect("sized from forward output");

        let mut tape = LayerTape::default();
        tape.record(edge, Arc::clone(&h), a);
        let grad = dr_spmm_backward(g.adj_t(edge), &dy, &tape, edge, workers)?;

        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
        let mut rhs = 0.0;
        for row in 0..h.num_rows() {
            for (t, &v) in h.row_values(row).iter().enumerate() {
                rhs += grad.get(row, t) * v;
            }
        }
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    Ok(CheckReport {
        name: "adjoint_identity",
        passed: worst <= ADJOINT_TOL,
        max_rel_error: Some(worst),
        detail: format!("3 edge types, max rel err {worst:.3e} (tol {ADJOINT_TOL:.0e})"),
    })
}

/// Labels for the finite-difference loss when the file carries none: the
/// degree mass of each cell's closed near-neighborhood, the same signal the
/// synthetic generator targets.
fn pseudo_labels(g: &HeteroGraph) -> Vec<f64> {
    let near = g.adj(EdgeType::Near);
    (0..g.n_cell())
        .map(|c| {
            let (cols, _) = near.row(c);
            let mass: usize = near.degree(c) + cols.iter().map(|&j| near.degree(j)).sum::<usize>();
            mass as f64
        })
        .collect()
}

/// Kept index sets and merge masks; probes are only comparable while this
/// stays fixed, since the loss is piecewise smooth between selection and
/// merge-winner changes.
type Signature = Vec<(Vec<usize>, Vec<usize>, Option<hcg_core::MergeMask>)>;

fn loss_and_signature(net: &Network, g: &HeteroGraph, labels: &[f64]) -> (f64, Signature) {
    let eval = net.forward(g, 1).expect("forward on verified shapes");
    let (loss, _) = mse_loss(&eval.prediction, labels).expect("label length checked");
    let sig = eval
        .layer_evals()
        .iter()
        .map(|le| {
            (
                le.h_cell().indices().to_vec(),
                le.h_net().indices().to_vec(),
                le.merge_mask().cloned(),
            )
        })
        .collect();
    (loss, sig)
}

/// Zero-mean, unit-variance copy. Keeps the finite-difference loss at O(1)
/// so the `eps * loss / step` rounding floor stays far below the tolerance.
fn standardized(labels: &[f64]) -> Vec<f64> {
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    labels.iter().map(|l| (l - mean) / scale).collect()
}

fn fd_check(g_full: &HeteroGraph, workers: usize) -> Result<CheckReport, CliError> {
    let mut g = reduced(g_full, MAX_FD_DIM);
    let labels = standardized(&match g.labels() {
        Some(l) => l.to_vec(),
        None => pseudo_labels(&g),
    });
    g = HeteroGraph::new(
        g.x_cell().clone(),
        g.x_net().clone(),
        g.adj(EdgeType::Pins).clone(),
        g.adj(EdgeType::Pinned).clone(),
        g.adj(EdgeType::Near).clone(),
        Some(labels.clone()),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
    let k = DreluConfig {
        k_cell: 3.min(g.d_cell()),
        k_net: 3.min(g.d_net()),
        mode: DreluMode::Literal,
    };
    let hidden = 8;
    let k_hidden = DreluConfig {
        k_cell: 3,
        k_net: 3,
        mode: DreluMode::Literal,
    };
    let net = Network::new(g.d_cell(), g.d_net(), hidden, k, k_hidden, &mut rng)?;

    let eval = net.forward(&g, workers)?;
    let (_, d_pred) = mse_loss(&eval.prediction, &labels)?;
    let back = net.backward(&g, &eval, &d_pred, workers)?;
    let (_, base_sig) = loss_and_signature(&net, &g, &labels);

    let mut worst = 0.0f64;
    let mut probed = 0usize;
    let mut skipped = 0usize;

    let mut probe = |analytic: f64, loss_at: &mut dyn FnMut(f64) -> (f64, Signature)| {
        if probed + skipped >= MAX_FD_PROBES {
            return;
        }
        let (lp, sp) = loss_at(FD_STEP);
        let (lm, sm) = loss_at(-FD_STEP);
        if sp != base_sig || sm != base_sig {
            skipped += 1;
            return;
        }
        probed += 1;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let excess = (fd - analytic).abs() - FD_ATOL;
        let scale = fd.abs().max(analytic.abs());
        if excess > 0.0 && scale > 0.0 {
            worst = worst.max(excess / scale);
        }
    };

    for (li, grads) in back.layer_grads.iter().enumerate() {
        let tensors: [(&[f64], usize); 6] = [
            (grads.w_pins.data(), 0),
            (grads.w_pinned.data(), 1),
            (grads.w_near.data(), 2),
            (&grads.b_pins, 3),
            (&grads.b_pinned, 4),
            (&grads.b_near, 5),
        ];
        for (gslice, ti) in tensors {
            for ci in 0..gslice.len() {
                probe(gslice[ci], &mut |h| {
                    let mut p = net.clone();
                    let layer = &mut p.layers[li];
                    let slot: &mut f64 = match ti {
                        0 => &mut layer.w_pins.data_mut()[ci],
                        1 => &mut layer.w_pinned.data_mut()[ci],
                        2 => &mut layer.w_near.data_mut()[ci],
                        3 => &mut layer.b_pins[ci],
                        4 => &mut layer.b_pinned[ci],
                        _ => &mut layer.b_near[ci],
                    };
                    *slot += h;
                    loss_and_signature(&p, &g, &labels)
                });
            }
        }
    }

    for ci in 0..g.n_cell() * g.d_cell() {
        probe(back.d_x_cell.data()[ci], &mut |h| {
            let mut x_cell = g.x_cell().clone();
            x_cell.data_mut()[ci] += h;
            let p = HeteroGraph::new(
                x_cell,
                g.x_net().clone(),
                g.adj(EdgeType::Pins).clone(),
                g.adj(EdgeType::Pinned).clone(),
                g.adj(EdgeType::Near).clone(),
                Some(labels.clone()),
            );
            loss_and_signature(&net, &p, &labels)
        });
    }

    Ok(CheckReport {
        name: "gradient_check",
        passed: worst <= FD_TOL && probed > skipped,
        max_rel_error: Some(worst),
        detail: format!(
            "{probed} coordinates probed ({skipped} skipped at selection boundaries), max rel err {worst:.3e} beyond atol {FD_ATOL:.0e} (tol {FD_TOL:.0e})"
        ),
    })
}

pub fn run(args: VerifyArgs, workers: usize) -> Result<(), CliError> {
    let mut checks = Vec::new();

    let report = match load_graph_arg(&args.graph) {
        Ok(g_full) => {
            push(&mut checks, structure_check(&g_full));
            let g = reduced(&g_full, MAX_KERNEL_DIM);
            push(&mut checks, oracle_check(&g, workers)?);
            push(&mut checks, adjoint_check(&g, workers)?);
            if args.fd_check {
                push(&mut checks, fd_check(&g_full, workers)?);
            }
            let passed = checks.iter().all(|c| c.passed);
            VerifyReport {
                schema_version: hcg_core::SCHEMA_VERSION,
                graph: args.graph.display().to_string(),
                workers,
                passed,
                checks,
            }
        }
        Err(CliError::Io(m)) => return Err(CliError::Io(m)),
        Err(e) => {
            push(
                &mut checks,
                CheckReport {
                    name: "load",
                    passed: false,
                    max_rel_error: None,
                    detail: e.to_string(),
                },
            );
            VerifyReport {
                schema_version: hcg_core::SCHEMA_VERSION,
                graph: args.graph.display().to_string(),
                workers,
                passed: false,
                checks,
            }
        }
    };

    println!(
        "{}",
        serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Io(format!("serializing report: {e}")))?
    );
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Check("verification failed".into()))
    }
}
