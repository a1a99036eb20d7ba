//! Row-wise top-k sparsifier and its compressed output format.
//!
//! Every row keeps exactly `k` entries: the `k` largest values, with value
//! ties resolved toward the smallest column index. The survivors of row `i`
//! are exactly the entries `>= row_threshold(x_i, k)` after tie resolution,
//! so the dense rule and the compressed rule agree. Keeping the count exact
//! per row is what makes the downstream sparse product balanced: every
//! source row contributes the same number of multiply-adds.

use crate::dense::DenseMatrix;
use crate::error::KernelError;
use serde::{Deserialize, Serialize};

/// Value policy for kept entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DreluMode {
    /// Keep the selected values as they are, negatives included.
    #[default]
    Literal,
    /// Clamp selected negatives to zero. The index set is identical to
    /// `Literal`; only stored values change. Clamped positions carry zero
    /// gradient, matching the usual `relu'(x) = 0` for `x <= 0` convention.
    Nonneg,
}

/// Per-node-type keep widths for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DreluConfig {
    pub k_cell: usize,
    pub k_net: usize,
    pub mode: DreluMode,
}

impl DreluConfig {
    /// Keep widths must satisfy `1 <= k <= min(dim, 64)` for their node type.
    pub fn check(&self, d_cell: usize, d_net: usize) -> Result<(), KernelError> {
        for (k, dim) in [(self.k_cell, d_cell), (self.k_net, d_net)] {
            if k < 1 || k > dim.min(64) {
                return Err(KernelError::BadK { k, dim: dim.min(64) });
            }
        }
        Ok(())
    }
}

/// Compressed balanced sparse rows: exactly `k` `(index, value)` pairs per
/// row, indices strictly increasing within a row, `k <= dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbsrMatrix {
    num_rows: usize,
    dim: usize,
    k: usize,
    values: Vec<f64>,
    indices: Vec<usize>,
}

impl CbsrMatrix {
    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    /// Width of the dense row this compresses.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row_values(&self, row: usize) -> &[f64] {
        &self.values[row * self.k..(row + 1) * self.k]
    }

    #[inline]
    pub fn row_indices(&self, row: usize) -> &[usize] {
        &self.indices[row * self.k..(row + 1) * self.k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// True when both matrices agree entry-for-entry, values by bit pattern.
    pub fn bits_eq(&self, other: &CbsrMatrix) -> bool {
        self.num_rows == other.num_rows
            && self.dim == other.dim
            && self.k == other.k
            && self.indices == other.indices
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_k(k: usize, dim: usize) -> Result<(), KernelError> {
    if k < 1 || k > dim {
        return Err(KernelError::BadK { k, dim });
    }
    Ok(())
}

/// Indices of the `k` winning entries of `row`, in ascending index order.
/// Selection ranks by value descending, breaking value ties toward the
/// smaller index, so the winner set is unique.
fn select_row(row: &[f64], k: usize, order: &mut Vec<usize>, out: &mut [usize]) {
    order.clear();
    order.extend(0..row.len());
    order.sort_unstable_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("inputs checked finite")
            .then_with(|| a.cmp(&b))
    });
    out.copy_from_slice(&order[..k]);
    out.sort_unstable();
}

/// The selection threshold of one row: the smallest value among the `k`
/// winners (the k-th largest value of the row).
pub fn row_threshold(row: &[f64], k: usize) -> Result<f64, KernelError> {
    check_k(k, row.len())?;
    if let Some(c) = row.iter().position(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite { row: 0, col: c });
    }
    let mut order = Vec::new();
    let mut kept = vec![0usize; k];
    select_row(row, k, &mut order, &mut kept);
    Ok(kept
        .iter()
        .map(|&c| row[c])
        .fold(f64::INFINITY, f64::min))
}

/// Keeps the top `k` entries of every row of `x`.
pub fn drelu_forward(x: &DenseMatrix, k: usize, mode: DreluMode) -> Result<CbsrMatrix, KernelError> {
    check_k(k, x.cols())?;
    if let Some((row, col)) = x.first_non_finite() {
        return Err(KernelError::NonFinite { row, col });
    }
    let num_rows = x.rows();
    let mut values = vec![0.0f64; num_rows * k];
    let mut indices = vec![0usize; num_rows * k];
    let mut order = Vec::with_capacity(x.cols());
    for r in 0..num_rows {
        let row = x.row(r);
        let kept = &mut indices[r * k..(r + 1) * k];
        select_row(row, k, &mut order, kept);
        let vals = &mut values[r * k..(r + 1) * k];
        for (slot, &c) in vals.iter_mut().zip(kept.iter()) {
            let v = row[c];
            *slot = match mode {
                DreluMode::Literal => v,
                DreluMode::Nonneg => v.max(0.0),
            };
        }
    }
    Ok(CbsrMatrix {
        num_rows,
        dim: x.cols(),
        k,
        values,
        indices,
    })
}

/// Scatters kept values back into a dense zero matrix.
pub fn cbsr_to_dense(x: &CbsrMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.num_rows, x.dim);
    for r in 0..x.num_rows {
        let row = out.row_mut(r);
        for (&c, &v) in x.row_indices(r).iter().zip(x.row_values(r)) {
            row[c] = v;
        }
    }
    out
}

/// Routes a gradient at kept coordinates (`num_rows x k`) back to the dense
/// input (`num_rows x dim`). Dropped coordinates get zero. Under
/// [`DreluMode::Nonneg`] the forward stored zero for clamped entries, and
/// those positions (stored value `<= 0`) also get zero gradient here.
pub fn drelu_backward(
    tape: &CbsrMatrix,
    upstream_kept: &DenseMatrix,
    mode: DreluMode,
) -> Result<DenseMatrix, KernelError> {
    if upstream_kept.rows() != tape.num_rows || upstream_kept.cols() != tape.k {
        return Err(KernelError::ShapeMismatch(format!(
            "kept gradient is {}x{}, tape wants {}x{}",
            upstream_kept.rows(),
            upstream_kept.cols(),
            tape.num_rows,
            tape.k
        )));
    }
    let mut out = DenseMatrix::zeros(tape.num_rows, tape.dim);
    for r in 0..tape.num_rows {
        let g = upstream_kept.row(r);
        let row = out.row_mut(r);
        for (t, (&c, &v)) in tape.row_indices(r).iter().zip(tape.row_values(r)).enumerate() {
            let pass = match mode {
                DreluMode::Literal => true,
                DreluMode::Nonneg => v > 0.0,
            };
            if pass {
                row[c] = g[t];
            }
        }
    }
    Ok(out)
}
