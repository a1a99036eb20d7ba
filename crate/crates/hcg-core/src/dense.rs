//! Row-major dense `f64` matrix used for features, embeddings and weights.

use crate::error::KernelError;

/// Row-major dense matrix. All numeric entry points in this crate accumulate
/// in a fixed order, so two calls with identical inputs produce identical
/// bits.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps an existing row-major buffer; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, KernelError> {
        if data.len() != rows * cols {
            return Err(KernelError::ShapeMismatch(format!(
                "buffer of {} entries cannot view as {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols, p % self.cols))
    }

    /// `self * rhs`, accumulated per output cell over the inner dimension in
    /// ascending order.
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, KernelError> {
        if self.cols != rhs.rows {
            return Err(KernelError::ShapeMismatch(format!(
                "matmul inner dims {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = out.row_mut(i);
            for (t, &l) in lhs_row.iter().enumerate() {
                let rhs_row = rhs.row(t);
                for (c, &r) in rhs_row.iter().enumerate() {
                    out_row[c] += l * r;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`; used for weight gradients.
    pub fn transpose_matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, KernelError> {
        if self.rows != rhs.rows {
            return Err(KernelError::ShapeMismatch(format!(
                "transpose_matmul outer dims {}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.cols, rhs.cols);
        for t in 0..self.rows {
            let lhs_row = self.row(t);
            let rhs_row = rhs.row(t);
            for (i, &l) in lhs_row.iter().enumerate() {
                let out_row = out.row_mut(i);
                for (c, &r) in rhs_row.iter().enumerate() {
                    out_row[c] += l * r;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`; used to push output gradients back through a weight.
    pub fn matmul_transpose(&self, rhs: &DenseMatrix) -> Result<DenseMatrix, KernelError> {
        if self.cols != rhs.cols {
            return Err(KernelError::ShapeMismatch(format!(
                "matmul_transpose inner dims {}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = out.row_mut(i);
            for (c, out_cell) in out_row.iter_mut().enumerate() {
                let rhs_row = rhs.row(c);
                let mut acc = 0.0;
                for (t, &l) in lhs_row.iter().enumerate() {
                    acc += l * rhs_row[t];
                }
                *out_cell += acc;
            }
        }
        Ok(out)
    }

    /// Adds `bias` to every row in place; `bias.len()` must equal `cols`.
    pub fn add_row_bias(&mut self, bias: &[f64]) -> Result<(), KernelError> {
        if bias.len() != self.cols {
            return Err(KernelError::ShapeMismatch(format!(
                "bias of len {} against {} columns",
                bias.len(),
                self.cols
            )));
        }
        for r in 0..self.rows {
            for (cell, b) in self.row_mut(r).iter_mut().zip(bias) {
                *cell += b;
            }
        }
        Ok(())
    }

    /// Per-column sums, accumulated top row to bottom row.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, rhs: &DenseMatrix) -> Result<(), KernelError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(KernelError::ShapeMismatch(format!(
                "add_assign {}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    /// True when every entry has the same bit pattern, including zero signs.
    pub fn bits_eq(&self, other: &DenseMatrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Largest relative elementwise difference, with an absolute floor of 1.0 in
/// the denominator so entries near zero compare absolutely.
pub fn max_rel_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.cols, b.cols);
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}
