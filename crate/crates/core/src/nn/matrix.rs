//! Dense row-major `f64` matrices and the handful of GEMM shapes the
//! networks need.
//!
//! Rows are samples throughout. Weights are stored `out × in`, so a layer's
//! forward pass is `X · Wᵀ`.

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return shape_err(format!("row {i} has length {}, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
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

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (dst, &src) in idx.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// Writes `src` rows back into the listed row positions.
    pub fn scatter_rows(&mut self, idx: &[usize], src: &Matrix) {
        debug_assert_eq!(idx.len(), src.rows);
        debug_assert_eq!(self.cols, src.cols);
        for (s, &dst) in idx.iter().enumerate() {
            self.row_mut(dst).copy_from_slice(src.row(s));
        }
    }

    /// Columns `[start, start + len)` as a new matrix.
    pub fn columns(&self, start: usize, len: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + len]);
        }
        out
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map(|m| m.rows).unwrap_or(0);
        if parts.iter().any(|m| m.rows != rows) {
            return shape_err("hcat operands have different row counts");
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let dst = out.row_mut(r);
            let mut off = 0;
            for m in parts {
                dst[off..off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|a| *a = v);
    }
}

/// `out = x · wᵀ` where `x` is `b × in` and `w` is `out × in`.
pub fn matmul_xwt(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    if x.cols != w.cols {
        return shape_err(format!(
            "input has {} columns, weight expects {}",
            x.cols, w.cols
        ));
    }
    let mut out = Matrix::zeros(x.rows, w.rows);
    gemm(
        x.rows,
        x.cols,
        w.rows,
        &x.data,
        (x.cols, 1),
        &w.data,
        (1, w.cols),
        0.0,
        &mut out.data,
        w.rows,
    );
    Ok(out)
}

/// `acc += dyᵀ · x` where `dy` is `b × out` and `x` is `b × in`; `acc` is `out × in`.
pub fn accumulate_dyt_x(acc: &mut Matrix, dy: &Matrix, x: &Matrix) {
    debug_assert_eq!(dy.rows, x.rows);
    debug_assert_eq!(acc.rows, dy.cols);
    debug_assert_eq!(acc.cols, x.cols);
    let cols = acc.cols;
    gemm(
        dy.cols,
        dy.rows,
        x.cols,
        &dy.data,
        (1, dy.cols),
        &x.data,
        (x.cols, 1),
        1.0,
        &mut acc.data,
        cols,
    );
}

/// `dx = dy · w` where `dy` is `b × out` and `w` is `out × in`.
pub fn matmul_dy_w(dy: &Matrix, w: &Matrix) -> Matrix {
    debug_assert_eq!(dy.cols, w.rows);
    let mut out = Matrix::zeros(dy.rows, w.cols);
    gemm(
        dy.rows,
        dy.cols,
        w.cols,
        &dy.data,
        (dy.cols, 1),
        &w.data,
        (w.cols, 1),
        0.0,
        &mut out.data,
        w.cols,
    );
    out
}

/// `c = a·b + beta·c` for an `m × k` by `k × n` product with explicit
/// (row, col) strides on the operands and a row-major output.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    // SAFETY: every stride/extent pair above addresses inside its slice;
    // the callers derive them from the matrices' own shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
