//! CSR adjacency storage.
//!
//! Rows index message destinations, columns index message sources, so a
//! product against source embeddings aggregates into destination rows.

use crate::error::GraphError;

/// Compressed sparse row adjacency with `f64` edge weights.
///
/// Invariants, enforced by [`build_csr`] and checked by
/// [`CsrAdjacency::validate_structure`]:
/// * `row_ptr.len() == num_rows + 1`, `row_ptr[0] == 0`, monotone
///   non-decreasing, `row_ptr[num_rows] == col_idx.len() == values.len()`;
/// * column indices are strictly increasing within each row (which also
///   rules out duplicates) and below `num_cols`;
/// * values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrAdjacency {
    num_rows: usize,
    num_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrAdjacency {
    /// Assembles a CSR from parts that already satisfy the invariants.
    pub fn from_parts(
        num_rows: usize,
        num_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, GraphError> {
        let a = Self {
            num_rows,
            num_cols,
            row_ptr,
            col_idx,
            values,
        };
        a.validate_structure()?;
        Ok(a)
    }

    pub fn empty(num_rows: usize, num_cols: usize) -> Self {
        Self {
            num_rows,
            num_cols,
            row_ptr: vec![0; num_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn degree(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_rows).map(|r| self.degree(r)).max().unwrap_or(0)
    }

    /// Neighbor columns and weights of `row`, in ascending column order.
    #[inline]
    pub fn row(&self, row: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// Checks the structural invariants listed on the type.
    pub fn validate_structure(&self) -> Result<(), GraphError> {
        if self.row_ptr.len() != self.num_rows + 1 {
            return Err(GraphError::DimMismatch(format!(
                "row_ptr has {} entries for {} rows",
                self.row_ptr.len(),
                self.num_rows
            )));
        }
        if self.row_ptr[0] != 0 {
            return Err(GraphError::DimMismatch("row_ptr[0] != 0".into()));
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len()
            || self.col_idx.len() != self.values.len()
        {
            return Err(GraphError::DimMismatch(format!(
                "row_ptr end {} vs {} columns vs {} values",
                self.row_ptr.last().unwrap(),
                self.col_idx.len(),
                self.values.len()
            )));
        }
        for r in 0..self.num_rows {
            if self.row_ptr[r] > self.row_ptr[r + 1] {
                return Err(GraphError::DimMismatch(format!(
                    "row_ptr decreases at row {r}"
                )));
            }
            let (cols, vals) = self.row(r);
            for (t, (&c, &v)) in cols.iter().zip(vals).enumerate() {
                if c >= self.num_cols {
                    return Err(GraphError::OutOfRange {
                        row: r,
                        col: c,
                        num_rows: self.num_rows,
                        num_cols: self.num_cols,
                    });
                }
                if t > 0 && cols[t - 1] >= c {
                    return Err(GraphError::DuplicateEdge { row: r, col: c });
                }
                if !v.is_finite() {
                    return Err(GraphError::DimMismatch(format!(
                        "non-finite weight at ({r}, {c})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact transpose; weights are preserved bit-for-bit. Built with a
    /// counting pass over destination columns, so output rows come out in
    /// ascending column order without sorting.
    pub fn transpose(&self) -> CsrAdjacency {
        let mut counts = vec![0usize; self.num_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.num_cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut cursor = counts;
        let nnz = self.nnz();
        let mut col_idx = vec![0usize; nnz];
        let mut values = vec![0.0f64; nnz];
        for r in 0..self.num_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = cursor[c];
                cursor[c] += 1;
                col_idx[slot] = r;
                values[slot] = v;
            }
        }
        CsrAdjacency {
            num_rows: self.num_cols,
            num_cols: self.num_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Edge set as `(row, col, value)` triples in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }
}

/// Builds a CSR from `(row, col, value)` triples in any order.
///
/// Rejects out-of-range coordinates and duplicate coordinates; within each
/// row the result stores columns in strictly increasing order.
pub fn build_csr(
    entries: &[(usize, usize, f64)],
    num_rows: usize,
    num_cols: usize,
) -> Result<CsrAdjacency, GraphError> {
    let mut counts = vec![0usize; num_rows + 1];
    for &(r, c, _) in entries {
        if r >= num_rows || c >= num_cols {
            return Err(GraphError::OutOfRange {
                row: r,
                col: c,
                num_rows,
                num_cols,
            });
        }
        counts[r + 1] += 1;
    }
    for i in 0..num_rows {
        counts[i + 1] += counts[i];
    }
    let row_ptr = counts.clone();
    let mut cursor = counts;
    let mut col_idx = vec![0usize; entries.len()];
    let mut values = vec![0.0f64; entries.len()];
    for &(r, c, v) in entries {
        let slot = cursor[r];
        cursor[r] += 1;
        col_idx[slot] = c;
        values[slot] = v;
    }
    // Column order within a row follows input order so far; sort each row and
    // reject duplicates while doing so.
    let mut scratch: Vec<(usize, f64)> = Vec::new();
    for r in 0..num_rows {
        let lo = row_ptr[r];
        let hi = row_ptr[r + 1];
        scratch.clear();
        scratch.extend(col_idx[lo..hi].iter().copied().zip(values[lo..hi].iter().copied()));
        scratch.sort_unstable_by_key(|&(c, _)| c);
        for w in scratch.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(GraphError::DuplicateEdge { row: r, col: w[0].0 });
            }
        }
        for (t, &(c, v)) in scratch.iter().enumerate() {
            col_idx[lo + t] = c;
            values[lo + t] = v;
        }
    }
    CsrAdjacency::from_parts(num_rows, num_cols, row_ptr, col_idx, values)
}
