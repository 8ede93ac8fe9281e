//! Dense row-major `f64` matrices.
//!
//! Scalars are 1×1 matrices and vectors are single rows. The only heavy
//! kernel is [`gemm`], which defers to `matrixmultiply` and handles
//! transposed operands through strides instead of copies.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Matrix::filled(1, 1, value)
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "from_vec",
                format!("{} values cannot fill {rows}x{cols}", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dim(
                    "from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
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
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1×1 matrix.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Matrix> {
        if rows * cols != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{}x{} -> {rows}x{cols}", self.rows, self.cols),
            ));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `self += other`; shapes must already agree.
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Plain product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out);
        Ok(out)
    }

    /// Bitwise equality, treating every NaN payload as distinct.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) ", self.rows, self.cols)?;
        let mut list = f.debug_list();
        for r in 0..self.rows.min(8) {
            list.entry(&self.row(r));
        }
        list.finish()
    }
}

/// `c = alpha · op(a) · op(b) + beta · c`, where `op` optionally transposes.
///
/// Shapes are the caller's responsibility; they are checked in debug builds.
pub fn gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    debug_assert_eq!(k, kb);
    debug_assert_eq!((c.rows, c.cols), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.data.iter_mut() {
            *x *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: the pointers cover `a`, `b` and `c` exactly for the given
    // dimensions and strides, and `c` does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}
