use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};

/// Dense row-major matrix of `f64`. Rows are samples wherever a matrix
/// carries a batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ArlError::shape("Matrix::new", format!("{rows}x{cols}"), "non-empty"));
        }
        if data.len() != rows * cols {
            return Err(ArlError::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(ArlError::shape(
                "Matrix::from_rows",
                format!("row of width {}", bad.len()),
                format!("width {cols}"),
            ));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// An `n x 1` column from a slice.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.expect_same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub(crate) fn expect_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(ArlError::shape(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&self, bias: &[f64]) -> Result<Matrix> {
        if bias.len() != self.cols {
            return Err(ArlError::shape(
                "add_row_vector",
                self.shape_str(),
                format!("bias of length {}", bias.len()),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.rows as f64;
        self.column_sums().into_iter().map(|s| s / n).collect()
    }

    /// Appends `extra` as a new last column.
    pub fn append_column(&self, extra: &[f64]) -> Result<Matrix> {
        if extra.len() != self.rows {
            return Err(ArlError::shape(
                "append_column",
                self.shape_str(),
                format!("column of length {}", extra.len()),
            ));
        }
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for (row, &e) in self.data.chunks_exact(self.cols).zip(extra) {
            data.extend_from_slice(row);
            data.push(e);
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Gathers the listed rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(ArlError::shape("select_rows", self.shape_str(), format!("row index {i}")));
            }
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(indices.len(), self.cols, data)
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(ArlError::shape("vstack", self.shape_str(), other.shape_str()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix::new(self.rows + other.rows, self.cols, data)
    }

    /// Splits at row `at` into `[0, at)` and `[at, rows)`. Both halves must be non-empty.
    pub fn split_rows(&self, at: usize) -> Result<(Matrix, Matrix)> {
        if at == 0 || at >= self.rows {
            return Err(ArlError::shape("split_rows", self.shape_str(), format!("split at {at}")));
        }
        let (top, bottom) = self.data.split_at(at * self.cols);
        Ok((
            Matrix::new(at, self.cols, top.to_vec())?,
            Matrix::new(self.rows - at, self.cols, bottom.to_vec())?,
        ))
    }

    /// `self * other^T`; both operands are read row-wise.
    pub fn matmul_transb(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(ArlError::shape("matmul_transb", self.shape_str(), other.shape_str()));
        }
        let (n, m, k) = (self.rows, other.rows, self.cols);
        let mut out = vec![0.0; n * m];
        // Four rows of `self` share each pass over `other`.
        let mut blocks = self.data.chunks_exact(4 * k);
        for (bi, block) in blocks.by_ref().enumerate() {
            let rows = [&block[..k], &block[k..2 * k], &block[2 * k..3 * k], &block[3 * k..]];
            for (j, b) in other.data.chunks_exact(k).enumerate() {
                let d = dot4(rows, b);
                for r in 0..4 {
                    out[(4 * bi + r) * m + j] = d[r];
                }
            }
        }
        let done = n - n % 4;
        for (i, a) in blocks.remainder().chunks_exact(k).enumerate() {
            for (j, b) in other.data.chunks_exact(k).enumerate() {
                out[(done + i) * m + j] = dot(a, b);
            }
        }
        Matrix::new(n, m, out)
    }

    /// `self^T * other`.
    pub fn matmul_transa(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(ArlError::shape("matmul_transa", self.shape_str(), other.shape_str()));
        }
        self.transpose().matmul_transb(&other.transpose())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `dot` of four rows against one, summed in exactly the same order.
#[inline]
fn dot4(a: [&[f64]; 4], b: &[f64]) -> [f64; 4] {
    let mut acc = [[0.0f64; 4]; 4];
    let k = b.len();
    let chunks = k / 4;
    for c in 0..chunks {
        let i = 4 * c;
        let bb = [b[i], b[i + 1], b[i + 2], b[i + 3]];
        for r in 0..4 {
            let ar = &a[r][i..i + 4];
            acc[r][0] += ar[0] * bb[0];
            acc[r][1] += ar[1] * bb[1];
            acc[r][2] += ar[2] * bb[2];
            acc[r][3] += ar[3] * bb[3];
        }
    }
    let mut out = [0.0; 4];
    for r in 0..4 {
        let mut tail = 0.0;
        for i in 4 * chunks..k {
            tail += a[r][i] * b[i];
        }
        out[r] = (acc[r][0] + acc[r][1]) + (acc[r][2] + acc[r][3]) + tail;
    }
    out
}

/// Real matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(ArlError::shape("matmul", a.shape_str(), b.shape_str()));
    }
    a.matmul_transb(&b.transpose())
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Indicator of `x > 0`; the subgradient at exactly zero is taken as 0.
pub fn relu_grad(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
