//! Multi-subgraph pipeline: runs the three edge-type passes either strictly
//! one after another or as a work-stealing task DAG, with identical numeric
//! results in both modes.
//!
//! Every forward output cell is owned by exactly one column-run task and
//! every backward output row by exactly one chunk, so the only cross-task
//! edges are readiness edges: forward chunks wait on their group's init,
//! the merge waits on both cell-side forwards, and backward chunks wait on
//! the data they read. Scheduling order can change timing but never bits.

use std::ops::Range;
use std::sync::atomic::{AtomicU8, AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    build_partition_plan, bucket_rows, default_k_by_bucket_for, PartitionPlan, DEFAULT_THRESHOLDS,
};
use crate::dense::DenseMatrix;
use crate::drelu::{drelu_forward, CbsrMatrix, DreluMode};
use crate::error::SchedulerError;
use crate::graph::{CsrAdjacency, EdgeType, HeteroGraph};
use crate::kernels::{backward_row_into, forward_row_into, weighted_ranges, MergeMask};
use crate::SCHEMA_VERSION;

/// How the three edge-type passes are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// One edge type at a time: init, forward, barrier, next group; merge
    /// after all forwards; backwards in the same strict group order.
    Sequential,
    /// All groups eligible at once; the merge barrier (after the two
    /// cell-side forwards) is the only cross-group dependency.
    Parallel,
}

impl PipelineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Sequential => "sequential",
            PipelineMode::Parallel => "parallel",
        }
    }
}

/// Settings for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    /// Worker threads; both modes spread row chunks over all of them.
    pub workers: usize,
    pub k_pins: usize,
    pub k_pinned: usize,
    pub k_near: usize,
    /// Bucket split widths `(K1, K2, K3)`; `None` derives them from each
    /// operand width.
    pub k_by_bucket: Option<(usize, usize, usize)>,
    pub thresholds: (usize, usize),
    pub drelu_mode: DreluMode,
    /// Also run the backward passes, using each path's forward output as
    /// its upstream gradient.
    pub with_backward: bool,
}

impl PipelineConfig {
    /// A config with keep width `k` for all three edge types and defaults
    /// everywhere else.
    pub fn new(mode: PipelineMode, workers: usize, k: usize) -> Self {
        Self {
            mode,
            workers,
            k_pins: k,
            k_pinned: k,
            k_near: k,
            k_by_bucket: None,
            thresholds: DEFAULT_THRESHOLDS,
            drelu_mode: DreluMode::Literal,
            with_backward: true,
        }
    }

    fn k_for(&self, edge: EdgeType) -> usize {
        match edge {
            EdgeType::Pins => self.k_pins,
            EdgeType::Pinned => self.k_pinned,
            EdgeType::Near => self.k_near,
        }
    }
}

/// Everything the run produced. Gradient matrices hold the adjoint at the
/// coordinates each forward kept (`n_src x k`), taking the forward outputs
/// themselves as upstream gradients: the pins path receives `y_net`, the
/// two cell paths receive `y_cell` routed through the merge mask.
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub y_net: DenseMatrix,
    pub y_near: DenseMatrix,
    pub y_pinned: DenseMatrix,
    pub y_cell: DenseMatrix,
    pub mask: MergeMask,
    pub grads: Option<PipelineGrads>,
}

/// Kept-coordinate gradients per edge type.
#[derive(Debug, Clone)]
pub struct PipelineGrads {
    pub pins: DenseMatrix,
    pub pinned: DenseMatrix,
    pub near: DenseMatrix,
}

/// Wall-clock accounting for one edge type, in nanoseconds of span (first
/// task start to last task end) per phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgePhaseTimes {
    pub edge_type: EdgeType,
    pub init_nanos: u64,
    pub forward_nanos: u64,
    pub backward_nanos: u64,
}

/// Timing report for one run.
///
/// `sequential_equivalent_nanos` sums the per-phase spans, estimating what a
/// strictly serialized schedule of the same work would take;
/// `overlap_ratio = 1 - wall / sequential_equivalent` (clamped to `[0, 1]`)
/// is the fraction of that hidden by overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub mode: PipelineMode,
    pub workers: usize,
    pub with_backward: bool,
    pub edges: Vec<EdgePhaseTimes>,
    pub merge_nanos: u64,
    pub busy_nanos: u64,
    pub sequential_equivalent_nanos: u64,
    pub wall_nanos: u64,
    pub overlap_ratio: f64,
}

/// Row-major matrix storage written by disjoint row chunks from several
/// threads and read back only after the writing phase completed.
///
/// Safety protocol: a chunk range is handed out exactly once (claims go
/// through a `fetch_add` ticket), distinct chunks never overlap, and every
/// read happens after observing the phase's completion counter with
/// `Acquire` ordering, which pairs with the `Release` increment each writer
/// performs after its last write.
struct SharedRows {
    ptr: *mut f64,
    rows: usize,
    cols: usize,
}

unsafe impl Send for SharedRows {}
unsafe impl Sync for SharedRows {}

impl SharedRows {
    fn new(m: &mut DenseMatrix) -> Self {
        Self {
            ptr: m.data_mut().as_mut_ptr(),
            rows: m.rows(),
            cols: m.cols(),
        }
    }

    /// SAFETY: `rows` must be a chunk the caller exclusively claimed, and
    /// no reader may run until the owning phase completes.
    #[allow(clippy::mut_from_ref)]
    unsafe fn chunk_mut(&self, rows: Range<usize>) -> &mut [f64] {
        debug_assert!(rows.end <= self.rows);
        std::slice::from_raw_parts_mut(
            self.ptr.add(rows.start * self.cols),
            (rows.end - rows.start) * self.cols,
        )
    }

    /// SAFETY: all writers must have finished, observed via an `Acquire`
    /// load of their completion counter.
    unsafe fn all(&self) -> &[f64] {
        std::slice::from_raw_parts(self.ptr, self.rows * self.cols)
    }
}

const INIT_TODO: u8 = 0;
const INIT_DONE: u8 = 2;

struct Prepared {
    cbsr: CbsrMatrix,
    plan: PartitionPlan,
}

struct PhaseChunks {
    next: AtomicUsize,
    done: AtomicUsize,
    ranges: Vec<Range<usize>>,
}

impl PhaseChunks {
    fn new(ranges: Vec<Range<usize>>) -> Self {
        Self {
            next: AtomicUsize::new(0),
            done: AtomicUsize::new(0),
            ranges,
        }
    }

    fn claim(&self) -> Option<(usize, Range<usize>)> {
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        if id < self.ranges.len() {
            Some((id, self.ranges[id].clone()))
        } else {
            None
        }
    }

    fn complete(&self) {
        self.done.fetch_add(1, Ordering::Release);
    }

    fn is_done(&self) -> bool {
        self.done.load(Ordering::Acquire) == self.ranges.len()
    }
}

struct GroupRun<'g> {
    edge: EdgeType,
    adj: &'g CsrAdjacency,
    adj_t: &'g CsrAdjacency,
    source: &'g DenseMatrix,
    k: usize,
    k_by_bucket: (usize, usize, usize),
    init_state: AtomicU8,
    prepared: OnceLock<Prepared>,
    fwd: PhaseChunks,
    bwd: PhaseChunks,
    out: SharedRows,
    grad_out: Option<SharedRows>,
}

impl GroupRun<'_> {
    fn fwd_complete(&self) -> bool {
        self.prepared.get().is_some() && self.fwd.is_done()
    }
}

struct MergeArtifacts {
    mask: MergeMask,
    routed: Option<(DenseMatrix, DenseMatrix)>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Init,
    Forward,
    Backward,
    Merge,
}

struct TaskSpan {
    group: usize,
    phase: Phase,
    start: u64,
    end: u64,
}

struct RunCtx<'g> {
    mode: PipelineMode,
    drelu_mode: DreluMode,
    thresholds: (usize, usize),
    with_backward: bool,
    groups: [GroupRun<'g>; 3],
    merge_state: AtomicU8,
    merge_done: AtomicU8,
    merge_art: OnceLock<MergeArtifacts>,
    y_cell: SharedRows,
    origin: Instant,
}

impl RunCtx<'_> {
    fn now(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn merge_is_done(&self) -> bool {
        self.merge_done.load(Ordering::Acquire) == 1
    }

    fn init_ready(&self, gi: usize) -> bool {
        match self.mode {
            PipelineMode::Parallel => true,
            PipelineMode::Sequential => self.groups[..gi].iter().all(GroupRun::fwd_complete),
        }
    }

    fn merge_ready(&self) -> bool {
        let near = &self.groups[2];
        let pinned = &self.groups[1];
        match self.mode {
            PipelineMode::Parallel => near.fwd_complete() && pinned.fwd_complete(),
            PipelineMode::Sequential => self.groups.iter().all(GroupRun::fwd_complete),
        }
    }

    fn bwd_ready(&self, gi: usize) -> bool {
        if !self.with_backward {
            return false;
        }
        match self.mode {
            PipelineMode::Parallel => match self.groups[gi].edge {
                EdgeType::Pins => self.groups[0].fwd_complete(),
                EdgeType::Pinned | EdgeType::Near => self.merge_is_done(),
            },
            PipelineMode::Sequential => {
                self.merge_is_done() && self.groups[..gi].iter().all(|g| g.bwd.is_done())
            }
        }
    }

    fn all_done(&self) -> bool {
        self.groups.iter().all(GroupRun::fwd_complete)
            && self.merge_is_done()
            && (!self.with_backward || self.groups.iter().all(|g| g.bwd.is_done()))
    }

    fn run_init(&self, gi: usize) {
        let g = &self.groups[gi];
        let cbsr = drelu_forward(g.source, g.k, self.drelu_mode).expect("validated before spawn");
        let buckets = bucket_rows(g.adj, self.thresholds).expect("validated before spawn");
        let plan = build_partition_plan(&buckets, g.k_by_bucket, cbsr.dim())
            .expect("validated before spawn");
        let stored = self.groups[gi].prepared.set(Prepared { cbsr, plan });
        debug_assert!(stored.is_ok(), "init claimed twice");
        g.init_state.store(INIT_DONE, Ordering::Release);
    }

    fn run_fwd_chunk(&self, gi: usize, range: Range<usize>) {
        let g = &self.groups[gi];
        let prep = g.prepared.get().expect("forward gated on init");
        let cols = g.out.cols;
        let out = unsafe { g.out.chunk_mut(range.clone()) };
        for (off, row) in range.enumerate() {
            forward_row_into(g.adj, &prep.cbsr, &prep.plan, row, &mut out[off * cols..(off + 1) * cols]);
        }
        g.fwd.complete();
    }

    fn run_merge(&self) {
        let near = &self.groups[2];
        let pinned = &self.groups[1];
        let rows = self.y_cell.rows;
        let cols = self.y_cell.cols;
        let near_data = unsafe { near.out.all() };
        let pinned_data = unsafe { pinned.out.all() };
        let out = unsafe { self.y_cell.chunk_mut(0..rows) };
        let mut mask = MergeMask::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                let (a, b) = (near_data[i], pinned_data[i]);
                if a >= b {
                    out[i] = a;
                    mask.set(r, c);
                } else {
                    out[i] = b;
                }
            }
        }
        let routed = self.with_backward.then(|| {
            let mut d_near = DenseMatrix::zeros(rows, cols);
            let mut d_pinned = DenseMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let d = out[r * cols + c];
                    if mask.get(r, c) {
                        d_near.set(r, c, d);
                    } else {
                        d_pinned.set(r, c, d);
                    }
                }
            }
            (d_near, d_pinned)
        });
        let stored = self.merge_art.set(MergeArtifacts { mask, routed });
        debug_assert!(stored.is_ok(), "merge claimed twice");
        self.merge_done.store(1, Ordering::Release);
    }

    fn run_bwd_chunk(&self, gi: usize, range: Range<usize>) {
        let g = &self.groups[gi];
        let prep = g.prepared.get().expect("backward gated on forward");
        let art = self.merge_art.get();
        let (dy, dy_cols): (&[f64], usize) = match g.edge {
            EdgeType::Pins => (unsafe { self.groups[0].out.all() }, self.groups[0].out.cols),
            EdgeType::Pinned => {
                let d = &art.expect("gated on merge").routed.as_ref().expect("backward run").1;
                (d.data(), d.cols())
            }
            EdgeType::Near => {
                let d = &art.expect("gated on merge").routed.as_ref().expect("backward run").0;
                (d.data(), d.cols())
            }
        };
        let grad = g.grad_out.as_ref().expect("backward enabled");
        let cols = grad.cols;
        let out = unsafe { grad.chunk_mut(range.clone()) };
        for (off, row) in range.enumerate() {
            backward_row_into(
                g.adj_t,
                dy,
                dy_cols,
                &prep.cbsr,
                row,
                &mut out[off * cols..(off + 1) * cols],
            );
        }
        g.bwd.complete();
    }

    /// Claims and runs one ready task, returning its span, or `None` if
    /// nothing was ready.
    fn try_run_one(&self, wid: usize) -> Option<TaskSpan> {
        // Heavier groups first in parallel mode, rotated per worker so the
        // workers fan out; canonical order when sequential.
        let scan: [usize; 3] = match self.mode {
            PipelineMode::Sequential => [0, 1, 2],
            PipelineMode::Parallel => {
                let heavy = [2, 1, 0];
                [
                    heavy[wid % 3],
                    heavy[(wid + 1) % 3],
                    heavy[(wid + 2) % 3],
                ]
            }
        };
        for &gi in &scan {
            let g = &self.groups[gi];
            if self.init_ready(gi)
                && g.init_state
                    .compare_exchange(INIT_TODO, 1, Ordering::AcqRel, Ordering::Relaxed)
                    .is_ok()
            {
                let start = self.now();
                self.run_init(gi);
                return Some(TaskSpan {
                    group: gi,
                    phase: Phase::Init,
                    start,
                    end: self.now(),
                });
            }
            if g.prepared.get().is_some() {
                if let Some((_, range)) = g.fwd.claim() {
                    let start = self.now();
                    self.run_fwd_chunk(gi, range);
                    return Some(TaskSpan {
                        group: gi,
                        phase: Phase::Forward,
                        start,
                        end: self.now(),
                    });
                }
            }
        }
        if self.merge_ready()
            && self
                .merge_state
                .compare_exchange(0, 1, Ordering::AcqRel, Ordering::Relaxed)
                .is_ok()
        {
            let start = self.now();
            self.run_merge();
            return Some(TaskSpan {
                group: 0,
                phase: Phase::Merge,
                start,
                end: self.now(),
            });
        }
        for &gi in &scan {
            if self.bwd_ready(gi) {
                if let Some((_, range)) = self.groups[gi].bwd.claim() {
                    let start = self.now();
                    self.run_bwd_chunk(gi, range);
                    return Some(TaskSpan {
                        group: gi,
                        phase: Phase::Backward,
                        start,
                        end: self.now(),
                    });
                }
            }
        }
        None
    }
}

fn run_worker(ctx: &RunCtx<'_>, wid: usize) -> Vec<TaskSpan> {
    let mut spans = Vec::new();
    let mut idle = 0u32;
    loop {
        if ctx.all_done() {
            return spans;
        }
        match ctx.try_run_one(wid) {
            Some(span) => {
                spans.push(span);
                idle = 0;
            }
            None => {
                idle += 1;
                if idle > 64 {
                    std::thread::sleep(std::time::Duration::from_micros(50));
                } else {
                    std::thread::yield_now();
                }
            }
        }
    }
}

fn validate(g: &HeteroGraph, cfg: &PipelineConfig) -> Result<(), SchedulerError> {
    if cfg.workers == 0 {
        return Err(SchedulerError::BadConfig("workers must be >= 1".into()));
    }
    if g.d_cell() != g.d_net() {
        return Err(SchedulerError::BadConfig(format!(
            "max merge needs equal operand widths, got d_cell={} and d_net={}",
            g.d_cell(),
            g.d_net()
        )));
    }
    let (low_max, med_max) = cfg.thresholds;
    if low_max == 0 || low_max >= med_max {
        return Err(SchedulerError::BadThresholds { low_max, med_max });
    }
    for edge in EdgeType::ALL {
        let dim = g.source_features(edge).cols();
        let k = cfg.k_for(edge);
        if k == 0 || k > dim {
            return Err(SchedulerError::BadConfig(format!(
                "keep width {k} for {edge} out of range 1..={dim}"
            )));
        }
        if let Some((r, c)) = g.source_features(edge).first_non_finite() {
            return Err(SchedulerError::BadConfig(format!(
                "non-finite feature at ({r}, {c}) feeding {edge}"
            )));
        }
    }
    Ok(())
}

fn resolve_k_by_bucket(
    cfg: &PipelineConfig,
    dim: usize,
) -> Result<(usize, usize, usize), SchedulerError> {
    match cfg.k_by_bucket {
        Some((k1, k2, k3)) => {
            if !(k1 > k2 && k2 > k3 && k3 >= 1 && k1 <= dim) {
                return Err(SchedulerError::BadBucketK { k1, k2, k3, dim });
            }
            Ok((k1, k2, k3))
        }
        None => default_k_by_bucket_for(dim),
    }
}

fn phase_span(spans: &[TaskSpan], group: usize, phase: Phase) -> u64 {
    let mut lo = u64::MAX;
    let mut hi = 0u64;
    for s in spans {
        if s.group == group && s.phase == phase {
            lo = lo.min(s.start);
            hi = hi.max(s.end);
        }
    }
    hi.saturating_sub(if lo == u64::MAX { hi } else { lo })
}

/// Runs drelu init, the three forward passes, the max merge and (optionally)
/// the three backward passes over `cfg.workers` threads.
///
/// Outputs are bit-identical across modes and worker counts; only the
/// timing report differs.
pub fn run_pipeline(
    g: &HeteroGraph,
    cfg: &PipelineConfig,
) -> Result<(PipelineOutputs, PipelineReport), SchedulerError> {
    validate(g, cfg)?;

    let mut y_net = DenseMatrix::zeros(g.n_net(), g.d_cell());
    let mut y_pinned = DenseMatrix::zeros(g.n_cell(), g.d_net());
    let mut y_near = DenseMatrix::zeros(g.n_cell(), g.d_cell());
    let mut y_cell = DenseMatrix::zeros(g.n_cell(), g.d_cell());
    let mut grads = cfg.with_backward.then(|| PipelineGrads {
        pins: DenseMatrix::zeros(g.n_cell(), cfg.k_pins),
        pinned: DenseMatrix::zeros(g.n_net(), cfg.k_pinned),
        near: DenseMatrix::zeros(g.n_cell(), cfg.k_near),
    });

    let chunk_target = (cfg.workers * 4).max(4);
    let mut groups: Vec<GroupRun<'_>> = Vec::with_capacity(3);
    for edge in EdgeType::ALL {
        let adj = g.adj(edge);
        let adj_t = g.adj_t(edge);
        let fwd_ranges = weighted_ranges(adj.num_rows(), chunk_target, |r| adj.degree(r) + 1);
        let bwd_ranges = weighted_ranges(adj_t.num_rows(), chunk_target, |r| adj_t.degree(r) + 1);
        let grad_out = grads.as_mut().map(|gr| {
            SharedRows::new(match edge {
                EdgeType::Pins => &mut gr.pins,
                EdgeType::Pinned => &mut gr.pinned,
                EdgeType::Near => &mut gr.near,
            })
        });
        let out = SharedRows::new(match edge {
            EdgeType::Pins => &mut y_net,
            EdgeType::Pinned => &mut y_pinned,
            EdgeType::Near => &mut y_near,
        });
        groups.push(GroupRun {
            edge,
            adj,
            adj_t,
            source: g.source_features(edge),
            k: cfg.k_for(edge),
            k_by_bucket: resolve_k_by_bucket(cfg, g.source_features(edge).cols())?,
            init_state: AtomicU8::new(INIT_TODO),
            prepared: OnceLock::new(),
            fwd: PhaseChunks::new(fwd_ranges),
            bwd: PhaseChunks::new(bwd_ranges),
            out,
            grad_out,
        });
    }
    let groups: [GroupRun<'_>; 3] = match groups.try_into() {
        Ok(a) => a,
        Err(_) => unreachable!("exactly three edge types"),
    };

    let ctx = RunCtx {
        mode: cfg.mode,
        drelu_mode: cfg.drelu_mode,
        thresholds: cfg.thresholds,
        with_backward: cfg.with_backward,
        groups,
        merge_state: AtomicU8::new(0),
        merge_done: AtomicU8::new(0),
        merge_art: OnceLock::new(),
        y_cell: SharedRows::new(&mut y_cell),
        origin: Instant::now(),
    };

    let spans: Vec<TaskSpan> = if cfg.workers == 1 {
        run_worker(&ctx, 0)
    } else {
        let ctx_ref = &ctx;
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.workers)
                .map(|wid| scope.spawn(move || run_worker(ctx_ref, wid)))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("pipeline worker panicked"))
                .collect()
        })
    };
    let wall_nanos = ctx.now();

    let mut edges = Vec::with_capacity(3);
    for (gi, edge) in EdgeType::ALL.into_iter().enumerate() {
        edges.push(EdgePhaseTimes {
            edge_type: edge,
            init_nanos: phase_span(&spans, gi, Phase::Init),
            forward_nanos: phase_span(&spans, gi, Phase::Forward),
            backward_nanos: phase_span(&spans, gi, Phase::Backward),
        });
    }
    let merge_nanos = phase_span(&spans, 0, Phase::Merge);
    let busy_nanos: u64 = spans.iter().map(|s| s.end - s.start).sum();
    let sequential_equivalent_nanos = edges
        .iter()
        .map(|e| e.init_nanos + e.forward_nanos + e.backward_nanos)
        .sum::<u64>()
        + merge_nanos;
    let overlap_ratio = if sequential_equivalent_nanos > 0 {
        (1.0 - wall_nanos as f64 / sequential_equivalent_nanos as f64).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let art = ctx
        .merge_art
        .into_inner()
        .expect("merge ran before workers exited");
    let report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        mode: cfg.mode,
        workers: cfg.workers,
        with_backward: cfg.with_backward,
        edges,
        merge_nanos,
        busy_nanos,
        sequential_equivalent_nanos,
        wall_nanos,
        overlap_ratio,
    };
    Ok((
        PipelineOutputs {
            y_net,
            y_near,
            y_pinned,
            y_cell,
            mask: art.mask,
            grads,
        },
        report,
    ))
}
