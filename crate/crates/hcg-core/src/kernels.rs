//! Sparse-adjacency times compressed-rows products and their adjoints.
//!
//! The forward product aggregates compressed source rows into dense
//! destination rows; the backward product computes gradients only at the
//! coordinates the forward pass kept, reading the cached transpose so each
//! source row is owned by exactly one task and no atomic updates are needed.
//! Dense weight application stays outside these kernels: callers multiply
//! the aggregated output with weight matrices as a plain dense product.
//!
//! Determinism: every output cell is written by exactly one task, and the
//! contributions to a cell are accumulated in ascending neighbor order, so
//! results are bit-identical for any worker count and any task schedule.

use crate::dense::DenseMatrix;
use crate::drelu::CbsrMatrix;
use crate::error::KernelError;
use crate::graph::{CsrAdjacency, EdgeType};
use crate::scheduler::PartitionPlan;
use std::sync::Arc;

/// Reference kernel: plain CSR times dense, neighbors in ascending column
/// order, feature columns inner. This is the oracle the compressed kernels
/// are tested against.
pub fn spmm_oracle(a: &CsrAdjacency, x: &DenseMatrix) -> Result<DenseMatrix, KernelError> {
    if x.rows() != a.num_cols() {
        return Err(KernelError::ShapeMismatch(format!(
            "adjacency {}x{} against {} source rows",
            a.num_rows(),
            a.num_cols(),
            x.rows()
        )));
    }
    let mut out = DenseMatrix::zeros(a.num_rows(), x.cols());
    for i in 0..a.num_rows() {
        let (cols, weights) = a.row(i);
        let out_row = out.row_mut(i);
        for (&j, &w) in cols.iter().zip(weights) {
            for (o, &v) in out_row.iter_mut().zip(x.row(j)) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Splits `0..num_rows` into at most `parts` contiguous ranges of roughly
/// equal total `weight`. Ranges never depend on timing, only on the inputs.
pub(crate) fn weighted_ranges(
    num_rows: usize,
    parts: usize,
    weight: impl Fn(usize) -> usize,
) -> Vec<std::ops::Range<usize>> {
    let parts = parts.max(1).min(num_rows.max(1));
    let total: usize = (0..num_rows).map(&weight).sum();
    let mut ranges = Vec::with_capacity(parts);
    let mut row = 0;
    let mut consumed = 0usize;
    for p in 0..parts {
        let target = (total * (p + 1)).div_ceil(parts);
        let start = row;
        while row < num_rows && (consumed < target || p + 1 == parts) {
            consumed += weight(row);
            row += 1;
        }
        ranges.push(start..row);
    }
    debug_assert_eq!(row, num_rows);
    ranges
}

/// Runs `f(row, out_row)` for every row of `out`, spreading contiguous
/// weighted row ranges over `workers` scoped threads. Each row of `out` is
/// written by exactly one thread.
pub(crate) fn for_each_row_parallel<F>(
    out: &mut DenseMatrix,
    workers: usize,
    weight: impl Fn(usize) -> usize,
    f: F,
) where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let num_rows = out.rows();
    let cols = out.cols();
    if workers <= 1 || num_rows <= 1 {
        for row in 0..num_rows {
            f(row, out.row_mut(row));
        }
        return;
    }
    let ranges = weighted_ranges(num_rows, workers, weight);
    let mut slices = Vec::with_capacity(ranges.len());
    let mut rest = out.data_mut();
    let mut cursor = 0;
    for r in &ranges {
        let (head, tail) = rest.split_at_mut((r.end - r.start) * cols);
        slices.push((r.clone(), head));
        rest = tail;
        cursor = r.end;
    }
    debug_assert_eq!(cursor, num_rows);
    std::thread::scope(|scope| {
        for (range, slice) in slices {
            if range.is_empty() {
                continue;
            }
            let f = &f;
            scope.spawn(move || {
                for (offset, row) in range.clone().enumerate() {
                    f(row, &mut slice[offset * cols..(offset + 1) * cols]);
                }
            });
        }
    });
}

/// Computes one destination row of the forward product, walking the row's
/// plan tasks in order. Within a task, neighbors are visited in ascending
/// column order and kept entries in ascending index order; since tasks of a
/// row cover disjoint output runs, every output cell sees its contributions
/// in ascending neighbor order.
#[inline]
pub(crate) fn forward_row_into(
    a: &CsrAdjacency,
    x: &CbsrMatrix,
    plan: &PartitionPlan,
    row: usize,
    out_row: &mut [f64],
) {
    let (cols, weights) = a.row(row);
    for task in plan.row_tasks(row) {
        if task.len == 0 {
            continue;
        }
        if task.start == 0 && task.len == x.dim() {
            for (&j, &w) in cols.iter().zip(weights) {
                let idx = x.row_indices(j);
                let vals = x.row_values(j);
                for (&c, &v) in idx.iter().zip(vals) {
                    out_row[c] += w * v;
                }
            }
            continue;
        }
        let lo_col = task.start;
        let hi_col = task.start + task.len;
        for (&j, &w) in cols.iter().zip(weights) {
            let idx = x.row_indices(j);
            let vals = x.row_values(j);
            let lo = idx.partition_point(|&c| c < lo_col);
            let hi = idx.partition_point(|&c| c < hi_col);
            for t in lo..hi {
                out_row[idx[t]] += w * vals[t];
            }
        }
    }
}

fn check_forward_args(
    a: &CsrAdjacency,
    x: &CbsrMatrix,
    plan: &PartitionPlan,
) -> Result<(), KernelError> {
    if x.num_rows() != a.num_cols() {
        return Err(KernelError::ShapeMismatch(format!(
            "adjacency {}x{} against {} compressed source rows",
            a.num_rows(),
            a.num_cols(),
            x.num_rows()
        )));
    }
    if plan.num_rows() != a.num_rows() {
        return Err(KernelError::PlanMismatch(format!(
            "plan covers {} rows, adjacency has {}",
            plan.num_rows(),
            a.num_rows()
        )));
    }
    if plan.dim() != x.dim() {
        return Err(KernelError::PlanMismatch(format!(
            "plan slices width {}, input width is {}",
            plan.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// Forward product: dense `a.num_rows() x x.dim()` output aggregating the
/// compressed rows of `x` through `a`, under the task decomposition of
/// `plan`. Bit-identical for any `workers`.
pub fn dr_spmm_forward(
    a: &CsrAdjacency,
    x: &CbsrMatrix,
    plan: &PartitionPlan,
    workers: usize,
) -> Result<DenseMatrix, KernelError> {
    check_forward_args(a, x, plan)?;
    let mut out = DenseMatrix::zeros(a.num_rows(), x.dim());
    for_each_row_parallel(&mut out, workers, |r| a.degree(r) + 1, |row, out_row| {
        forward_row_into(a, x, plan, row, out_row)
    });
    Ok(out)
}

/// Computes one source row of the backward product: gradients at the `k`
/// coordinates the forward pass kept for that row, accumulating destination
/// neighbors in ascending order. `dy` is passed as a raw row-major buffer of
/// width `dy_cols` so callers can feed synchronized views of shared storage.
#[inline]
pub(crate) fn backward_row_into(
    a_t: &CsrAdjacency,
    dy: &[f64],
    dy_cols: usize,
    x: &CbsrMatrix,
    row: usize,
    out_row: &mut [f64],
) {
    let (nbrs, weights) = a_t.row(row);
    let idx = x.row_indices(row);
    for (&i, &w) in nbrs.iter().zip(weights) {
        let dy_row = &dy[i * dy_cols..(i + 1) * dy_cols];
        for (o, &c) in out_row.iter_mut().zip(idx) {
            *o += w * dy_row[c];
        }
    }
}

/// What one forward edge pass recorded for its backward pass.
#[derive(Debug, Clone)]
pub struct EdgeTape {
    /// Compressed source rows consumed by the forward product.
    pub cbsr: Arc<CbsrMatrix>,
    /// Shape of the forward adjacency, for transpose checking.
    pub adj_rows: usize,
    pub adj_cols: usize,
}

/// Per-edge-type tapes plus the merge mask of one layer evaluation.
#[derive(Debug, Clone, Default)]
pub struct LayerTape {
    pins: Option<EdgeTape>,
    pinned: Option<EdgeTape>,
    near: Option<EdgeTape>,
    mask: Option<MergeMask>,
}

impl LayerTape {
    pub fn record(&mut self, edge: EdgeType, cbsr: Arc<CbsrMatrix>, a: &CsrAdjacency) {
        let tape = EdgeTape {
            cbsr,
            adj_rows: a.num_rows(),
            adj_cols: a.num_cols(),
        };
        match edge {
            EdgeType::Pins => self.pins = Some(tape),
            EdgeType::Pinned => self.pinned = Some(tape),
            EdgeType::Near => self.near = Some(tape),
        }
    }

    pub fn edge(&self, edge: EdgeType) -> Option<&EdgeTape> {
        match edge {
            EdgeType::Pins => self.pins.as_ref(),
            EdgeType::Pinned => self.pinned.as_ref(),
            EdgeType::Near => self.near.as_ref(),
        }
    }

    pub fn set_mask(&mut self, mask: MergeMask) {
        self.mask = Some(mask);
    }

    pub fn mask(&self) -> Option<&MergeMask> {
        self.mask.as_ref()
    }
}

/// Backward product through one recorded edge: for each source row `j` and
/// kept slot `t`, sums `a_t[j, i] * dy[i, indices[j][t]]` over destination
/// neighbors `i`. Output is `a_t.num_rows() x k`, aligned with the tape's
/// kept coordinates. Bit-identical for any `workers`.
pub fn dr_spmm_backward(
    a_t: &CsrAdjacency,
    dy: &DenseMatrix,
    tape: &LayerTape,
    edge: EdgeType,
    workers: usize,
) -> Result<DenseMatrix, KernelError> {
    let rec = tape.edge(edge).ok_or_else(|| {
        KernelError::TapeMismatch(format!("no {edge} pass recorded on this tape"))
    })?;
    if a_t.num_rows() != rec.adj_cols || a_t.num_cols() != rec.adj_rows {
        return Err(KernelError::TapeMismatch(format!(
            "a_t is {}x{}, transpose of the recorded {edge} adjacency would be {}x{}",
            a_t.num_rows(),
            a_t.num_cols(),
            rec.adj_cols,
            rec.adj_rows
        )));
    }
    if rec.cbsr.num_rows() != a_t.num_rows() {
        return Err(KernelError::TapeMismatch(format!(
            "tape has {} compressed rows, adjacency transpose has {} rows",
            rec.cbsr.num_rows(),
            a_t.num_rows()
        )));
    }
    if dy.rows() != rec.adj_rows || dy.cols() != rec.cbsr.dim() {
        return Err(KernelError::ShapeMismatch(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            dy.rows(),
            dy.cols(),
            rec.adj_rows,
            rec.cbsr.dim()
        )));
    }
    let x = &rec.cbsr;
    let mut out = DenseMatrix::zeros(a_t.num_rows(), x.k());
    for_each_row_parallel(&mut out, workers, |r| a_t.degree(r) + 1, |row, out_row| {
        backward_row_into(a_t, dy.data(), dy.cols(), x, row, out_row)
    });
    Ok(out)
}

/// Bit mask remembering which side won each cell of a max merge; a set bit
/// means the `near` side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeMask {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl MergeMask {
    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            words: vec![0; (rows * cols).div_ceil(64)],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        let bit = r * self.cols + c;
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize) {
        let bit = r * self.cols + c;
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    /// Number of cells won by the near side.
    pub fn near_wins(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Element-wise max of the two cell-side paths. Ties go to `near`, so
/// exactly one side owns every cell and the backward split is exact.
pub fn max_merge(
    near: &DenseMatrix,
    pinned: &DenseMatrix,
) -> Result<(DenseMatrix, MergeMask), KernelError> {
    if near.rows() != pinned.rows() || near.cols() != pinned.cols() {
        return Err(KernelError::ShapeMismatch(format!(
            "max merge of {}x{} against {}x{}",
            near.rows(),
            near.cols(),
            pinned.rows(),
            pinned.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(near.rows(), near.cols());
    let mut mask = MergeMask::zeros(near.rows(), near.cols());
    for r in 0..near.rows() {
        for c in 0..near.cols() {
            let a = near.get(r, c);
            let b = pinned.get(r, c);
            if a >= b {
                out.set(r, c, a);
                mask.set(r, c);
            } else {
                out.set(r, c, b);
            }
        }
    }
    Ok((out, mask))
}

/// Routes the merged gradient to whichever side won each cell; the loser
/// gets exact zero, so `d_near + d_pinned` reproduces `d` without rounding.
pub fn max_merge_backward(
    d: &DenseMatrix,
    mask: &MergeMask,
) -> Result<(DenseMatrix, DenseMatrix), KernelError> {
    if d.rows() != mask.rows() || d.cols() != mask.cols() {
        return Err(KernelError::ShapeMismatch(format!(
            "gradient {}x{} against mask {}x{}",
            d.rows(),
            d.cols(),
            mask.rows(),
            mask.cols()
        )));
    }
    let mut d_near = DenseMatrix::zeros(d.rows(), d.cols());
    let mut d_pinned = DenseMatrix::zeros(d.rows(), d.cols());
    for r in 0..d.rows() {
        for c in 0..d.cols() {
            if mask.get(r, c) {
                d_near.set(r, c, d.get(r, c));
            } else {
                d_pinned.set(r, c, d.get(r, c));
            }
        }
    }
    Ok((d_near, d_pinned))
}

/// Per-row cost model of one product: row `i` costs `degree(i) * d`
/// multiply-adds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadEstimate {
    per_row: Vec<usize>,
    max_workload: usize,
    num_rows: usize,
}

impl WorkloadEstimate {
    pub fn per_row(&self) -> &[usize] {
        &self.per_row
    }

    pub fn max_workload(&self) -> usize {
        self.max_workload
    }

    pub fn total_workload(&self) -> usize {
        self.per_row.iter().sum()
    }

    /// Largest useful parallel width for `t_avail` execution slots: the
    /// floored quotient of `t_avail` by the heaviest row, at least 1 when
    /// any slot exists, and never more than the row count.
    pub fn p_max(&self, t_avail: usize) -> usize {
        if t_avail == 0 || self.num_rows == 0 {
            return 0;
        }
        if self.max_workload == 0 {
            return self.num_rows;
        }
        (t_avail / self.max_workload).max(1).min(self.num_rows)
    }
}

/// Cost model for multiplying `a` against a width-`d` embedding.
pub fn estimate_workload(a: &CsrAdjacency, d: usize) -> WorkloadEstimate {
    let per_row: Vec<usize> = (0..a.num_rows()).map(|r| a.degree(r) * d).collect();
    let max_workload = per_row.iter().copied().max().unwrap_or(0);
    WorkloadEstimate {
        per_row,
        max_workload,
        num_rows: a.num_rows(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drelu::{cbsr_to_dense, drelu_forward, DreluMode};
    use crate::graph::build_csr;
    use crate::scheduler::{
        bucket_rows, build_partition_plan, default_k_by_bucket_for, DEFAULT_THRESHOLDS,
    };
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn random_csr(rng: &mut StdRng, rows: usize, cols: usize, density: f64) -> CsrAdjacency {
        let mut seen = BTreeSet::new();
        let n = ((rows * cols) as f64 * density) as usize;
        while seen.len() < n {
            seen.insert((rng.random_range(0..rows), rng.random_range(0..cols)));
        }
        let entries: Vec<_> = seen
            .into_iter()
            .map(|(r, c)| (r, c, rng.random_range(-1.5..1.5)))
            .collect();
        build_csr(&entries, rows, cols).unwrap()
    }

    fn random_dense(rng: &mut StdRng, rows: usize, cols: usize) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn plan_for(a: &CsrAdjacency, dim: usize) -> PartitionPlan {
        let buckets = bucket_rows(a, DEFAULT_THRESHOLDS).unwrap();
        build_partition_plan(&buckets, default_k_by_bucket_for(dim).unwrap(), dim).unwrap()
    }

    /// Independent reference: densify the adjacency and run the scalar
    /// triple loop.
    fn dense_triple_loop(a: &CsrAdjacency, x: &DenseMatrix) -> DenseMatrix {
        let mut ad = DenseMatrix::zeros(a.num_rows(), a.num_cols());
        for (r, c, v) in a.entries() {
            ad.set(r, c, v);
        }
        ad.matmul(x).unwrap()
    }

    #[test]
    fn oracle_matches_densified_triple_loop() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..20 {
            let (rows, cols, d) = (
                rng.random_range(1..20),
                rng.random_range(1..20),
                rng.random_range(1..9),
            );
            let a = random_csr(&mut rng, rows, cols, 0.3);
            let x = random_dense(&mut rng, cols, d);
            let fast = spmm_oracle(&a, &x).unwrap();
            let slow = dense_triple_loop(&a, &x);
            assert!(fast.bits_eq(&slow));
        }
    }

    #[test]
    fn forward_on_identity_returns_densified_input() {
        let mut rng = StdRng::seed_from_u64(2);
        let n = 9;
        let dim = 6;
        let eye = build_csr(
            &(0..n).map(|i| (i, i, 1.0)).collect::<Vec<_>>(),
            n,
            n,
        )
        .unwrap();
        let x = drelu_forward(&random_dense(&mut rng, n, dim), 3, DreluMode::Literal).unwrap();
        let plan = plan_for(&eye, dim);
        let y = dr_spmm_forward(&eye, &x, &plan, 1).unwrap();
        assert!(y.bits_eq(&cbsr_to_dense(&x)));
    }

    #[test]
    fn forward_with_full_width_matches_oracle_bit_for_bit() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_csr(&mut rng, 14, 11, 0.4);
        let dim = 8;
        let dense = random_dense(&mut rng, 11, dim);
        let x = drelu_forward(&dense, dim, DreluMode::Literal).unwrap();
        let plan = plan_for(&a, dim);
        let y = dr_spmm_forward(&a, &x, &plan, 1).unwrap();
        let oracle = spmm_oracle(&a, &dense).unwrap();
        assert!(y.bits_eq(&oracle));
    }

    #[test]
    fn forward_matches_oracle_on_densified_input() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..30 {
            let rows = rng.random_range(1..24);
            let cols = rng.random_range(1..24);
            let dim = rng.random_range(3..12);
            let k = rng.random_range(1..=dim);
            let a = random_csr(&mut rng, rows, cols, 0.35);
            let x = drelu_forward(&random_dense(&mut rng, cols, dim), k, DreluMode::Literal).unwrap();
            let plan = plan_for(&a, dim);
            let y = dr_spmm_forward(&a, &x, &plan, 1).unwrap();
            let oracle = spmm_oracle(&a, &cbsr_to_dense(&x)).unwrap();
            assert!(
                crate::dense::max_rel_error(&y, &oracle) <= 1e-9,
                "rel err {}",
                crate::dense::max_rel_error(&y, &oracle)
            );
        }
    }

    #[test]
    fn forward_is_bit_identical_across_worker_counts() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_csr(&mut rng, 40, 30, 0.2);
        let x = drelu_forward(&random_dense(&mut rng, 30, 10), 4, DreluMode::Literal).unwrap();
        let plan = plan_for(&a, 10);
        let base = dr_spmm_forward(&a, &x, &plan, 1).unwrap();
        for workers in [2, 3, 8] {
            assert!(dr_spmm_forward(&a, &x, &plan, workers).unwrap().bits_eq(&base));
        }
    }

    #[test]
    fn forward_rejects_mismatched_plan_and_shapes() {
        let mut rng = StdRng::seed_from_u64(6);
        let a = random_csr(&mut rng, 8, 6, 0.4);
        let x = drelu_forward(&random_dense(&mut rng, 6, 5), 2, DreluMode::Literal).unwrap();
        let plan = plan_for(&a, 5);
        let wrong_rows = plan_for(&random_csr(&mut rng, 9, 6, 0.4), 5);
        assert!(matches!(
            dr_spmm_forward(&a, &x, &wrong_rows, 1),
            Err(KernelError::PlanMismatch(_))
        ));
        let wrong_dim = plan_for(&a, 7);
        assert!(matches!(
            dr_spmm_forward(&a, &x, &wrong_dim, 1),
            Err(KernelError::PlanMismatch(_))
        ));
        let short = drelu_forward(&random_dense(&mut rng, 5, 5), 2, DreluMode::Literal).unwrap();
        assert!(matches!(
            dr_spmm_forward(&a, &short, &plan, 1),
            Err(KernelError::ShapeMismatch(_))
        ));
    }

    fn tape_for(a: &CsrAdjacency, x: &CbsrMatrix, edge: EdgeType) -> LayerTape {
        let mut tape = LayerTape::default();
        tape.record(edge, Arc::new(x.clone()), a);
        tape
    }

    #[test]
    fn backward_on_identity_is_a_gather() {
        let mut rng = StdRng::seed_from_u64(7);
        let n = 7;
        let dim = 6;
        let eye = build_csr(&(0..n).map(|i| (i, i, 1.0)).collect::<Vec<_>>(), n, n).unwrap();
        let x = drelu_forward(&random_dense(&mut rng, n, dim), 2, DreluMode::Literal).unwrap();
        let dy = random_dense(&mut rng, n, dim);
        let tape = tape_for(&eye, &x, EdgeType::Near);
        let g = dr_spmm_backward(&eye.transpose(), &dy, &tape, EdgeType::Near, 1).unwrap();
        for j in 0..n {
            for (t, &c) in x.row_indices(j).iter().enumerate() {
                assert_eq!(g.get(j, t), dy.get(j, c));
            }
        }
    }

    #[test]
    fn backward_with_full_width_matches_transposed_oracle() {
        let mut rng = StdRng::seed_from_u64(8);
        let a = random_csr(&mut rng, 12, 9, 0.4);
        let dim = 5;
        let x = drelu_forward(&random_dense(&mut rng, 9, dim), dim, DreluMode::Literal).unwrap();
        let dy = random_dense(&mut rng, 12, dim);
        let tape = tape_for(&a, &x, EdgeType::Pins);
        let g = dr_spmm_backward(&a.transpose(), &dy, &tape, EdgeType::Pins, 1).unwrap();
        // With k == dim the kept coordinates are 0..dim in order, so the
        // gradient is exactly the transposed oracle product.
        let oracle = spmm_oracle(&a.transpose(), &dy).unwrap();
        assert!(g.bits_eq(&oracle));
    }

    #[test]
    fn forward_and_backward_satisfy_the_adjoint_identity() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..30 {
            let rows = rng.random_range(1..20);
            let cols = rng.random_range(1..20);
            let dim = rng.random_range(3..10);
            let k = rng.random_range(1..=dim);
            let a = random_csr(&mut rng, rows, cols, 0.3);
            let x = drelu_forward(&random_dense(&mut rng, cols, dim), k, DreluMode::Literal).unwrap();
            let dy = random_dense(&mut rng, rows, dim);
            let plan = plan_for(&a, dim);
            let y = dr_spmm_forward(&a, &x, &plan, 1).unwrap();
            let tape = tape_for(&a, &x, EdgeType::Near);
            let g = dr_spmm_backward(&a.transpose(), &dy, &tape, EdgeType::Near, 1).unwrap();
            let lhs: f64 = y.data().iter().zip(dy.data()).map(|(p, q)| p * q).sum();
            let rhs: f64 = g.data().iter().zip(x.values()).map(|(p, q)| p * q).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!(
                (lhs - rhs).abs() / scale <= 1e-9,
                "adjoint gap {} vs {}",
                lhs,
                rhs
            );
        }
    }

    #[test]
    fn backward_is_bit_identical_across_worker_counts() {
        let mut rng = StdRng::seed_from_u64(10);
        let a = random_csr(&mut rng, 30, 25, 0.25);
        let x = drelu_forward(&random_dense(&mut rng, 25, 8), 3, DreluMode::Literal).unwrap();
        let dy = random_dense(&mut rng, 30, 8);
        let tape = tape_for(&a, &x, EdgeType::Pinned);
        let a_t = a.transpose();
        let base = dr_spmm_backward(&a_t, &dy, &tape, EdgeType::Pinned, 1).unwrap();
        for workers in [2, 5] {
            assert!(dr_spmm_backward(&a_t, &dy, &tape, EdgeType::Pinned, workers)
                .unwrap()
                .bits_eq(&base));
        }
    }

    #[test]
    fn backward_rejects_wrong_tape_or_shapes() {
        let mut rng = StdRng::seed_from_u64(11);
        let a = random_csr(&mut rng, 8, 6, 0.5);
        let x = drelu_forward(&random_dense(&mut rng, 6, 5), 2, DreluMode::Literal).unwrap();
        let dy = random_dense(&mut rng, 8, 5);
        let tape = tape_for(&a, &x, EdgeType::Near);
        // Asking for an edge that was never recorded.
        assert!(matches!(
            dr_spmm_backward(&a.transpose(), &dy, &tape, EdgeType::Pins, 1),
            Err(KernelError::TapeMismatch(_))
        ));
        // Passing the forward adjacency where the transpose belongs.
        assert!(matches!(
            dr_spmm_backward(&a, &dy, &tape, EdgeType::Near, 1),
            Err(KernelError::TapeMismatch(_))
        ));
        let bad_dy = random_dense(&mut rng, 8, 7);
        assert!(matches!(
            dr_spmm_backward(&a.transpose(), &bad_dy, &tape, EdgeType::Near, 1),
            Err(KernelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn max_merge_takes_ties_from_near() {
        let near = DenseMatrix::from_vec(2, 2, vec![1.0, 5.0, -2.0, 0.0]).unwrap();
        let pinned = DenseMatrix::from_vec(2, 2, vec![1.0, 3.0, -1.0, 0.5]).unwrap();
        let (y, mask) = max_merge(&near, &pinned).unwrap();
        assert_eq!(y.data(), &[1.0, 5.0, -1.0, 0.5]);
        assert!(mask.get(0, 0), "tie goes to near");
        assert!(mask.get(0, 1));
        assert!(!mask.get(1, 0));
        assert!(!mask.get(1, 1));
        assert_eq!(mask.near_wins(), 2);
    }

    #[test]
    fn max_merge_backward_conserves_the_gradient_bitwise() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..25 {
            let rows = rng.random_range(1..10);
            let cols = rng.random_range(1..10);
            let near = random_dense(&mut rng, rows, cols);
            let pinned = random_dense(&mut rng, rows, cols);
            let (_, mask) = max_merge(&near, &pinned).unwrap();
            let d = random_dense(&mut rng, rows, cols);
            let (dn, dp) = max_merge_backward(&d, &mask).unwrap();
            for r in 0..rows {
                for c in 0..cols {
                    let got = dn.get(r, c) + dp.get(r, c);
                    assert_eq!(got.to_bits(), d.get(r, c).to_bits());
                    // Exactly one side carries each cell.
                    assert!(dn.get(r, c) == 0.0 || dp.get(r, c) == 0.0);
                }
            }
        }
    }

    #[test]
    fn workload_model_matches_hand_examples() {
        // Star: one row with degree 100.
        let star = build_csr(
            &(0..100).map(|c| (0, c, 1.0)).collect::<Vec<_>>(),
            4,
            100,
        )
        .unwrap();
        let w = estimate_workload(&star, 4);
        assert_eq!(w.per_row()[0], 400);
        assert_eq!(w.max_workload(), 400);
        // 200 slots cannot even cover the heaviest row: clamp to 1.
        assert_eq!(w.p_max(200), 1);

        let eye = build_csr(&(0..16).map(|i| (i, i, 1.0)).collect::<Vec<_>>(), 16, 16).unwrap();
        let w = estimate_workload(&eye, 8);
        assert_eq!(w.max_workload(), 8);
        assert_eq!(w.p_max(64), 8);
        assert_eq!(w.p_max(1 << 20), 16, "capped by the row count");
        assert_eq!(w.p_max(0), 0);

        let empty = CsrAdjacency::empty(5, 5);
        assert_eq!(estimate_workload(&empty, 4).p_max(3), 5);
    }

    #[test]
    fn weighted_ranges_cover_without_overlap() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..40 {
            let n = rng.random_range(0..50);
            let parts = rng.random_range(1..9);
            let weights: Vec<usize> = (0..n).map(|_| rng.random_range(0..20)).collect();
            let ranges = weighted_ranges(n, parts, |r| weights[r]);
            let mut next = 0;
            for r in &ranges {
                assert_eq!(r.start, next);
                next = r.end;
            }
            assert_eq!(next, n);
        }
    }
}
