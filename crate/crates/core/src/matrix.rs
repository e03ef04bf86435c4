//! Dense row-major matrices and the validated alignment block.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on alignment-block row sums (slices of row-stochastic rows).
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix buffer",
                format!("{rows}x{cols} = {} values", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!("row {i}"), cols, r.len()));
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn widen(&self) -> Matrix<f64> {
        self.map(Scalar::widen)
    }

    /// Row-major sum accumulated in f64.
    pub fn total(&self) -> f64 {
        self.data.iter().map(|v| v.widen()).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v.widen()).sum()
    }

    /// Frobenius norm in f64.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.widen();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Copy of rows `r0..r1` restricted to columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Result<Self> {
        if r0 > r1 || c0 > c1 || r1 > self.rows || c1 > self.cols {
            return Err(Error::shape(
                "block",
                format!(
                    "rows {r0}..{r1}, cols {c0}..{c1} within {}x{}",
                    self.rows, self.cols
                ),
                format!("{}x{}", self.rows, self.cols),
            ));
        }
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            data.extend_from_slice(&self.row(i)[c0..c1]);
        }
        Ok(Self {
            rows: r1 - r0,
            cols: c1 - c0,
            data,
        })
    }

    /// First non-finite entry, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize, T)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / self.cols, k % self.cols, self.data[k]))
    }

    pub(crate) fn check_finite(&self, what: &str) -> Result<()> {
        match self.find_non_finite() {
            Some((i, j, v)) => Err(Error::InvalidValue {
                location: format!("{what}[{i},{j}]"),
                value: v.widen(),
                reason: "non-finite entry",
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn check_non_negative(&self, what: &str) -> Result<()> {
        self.check_finite(what)?;
        if let Some(k) = self.data.iter().position(|&v| v < T::zero()) {
            return Err(Error::InvalidValue {
                location: format!("{what}[{},{}]", k / self.cols, k % self.cols),
                value: self.data[k].widen(),
                reason: "negative entry",
            });
        }
        Ok(())
    }
}

/// The `L_s x L_t` block of attention from speech-token queries (rows) to
/// target-text-token keys (columns).
///
/// Entries are finite and in `[0, 1]`, and each row sums to at most
/// `1 + ROW_SUM_TOLERANCE` because rows are slices of softmax rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix<T> {
    values: Matrix<T>,
}

impl<T: Scalar> AlignmentMatrix<T> {
    pub fn new(values: Matrix<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("alignment matrix"));
        }
        values.check_non_negative("alignment")?;
        for i in 0..values.rows() {
            for (j, &v) in values.row(i).iter().enumerate() {
                if v > T::one() {
                    return Err(Error::InvalidValue {
                        location: format!("alignment[{i},{j}]"),
                        value: v.widen(),
                        reason: "probability above 1",
                    });
                }
            }
            let s = values.row_sum(i);
            if s > 1.0 + ROW_SUM_TOLERANCE {
                return Err(Error::InvalidValue {
                    location: format!("alignment row {i}"),
                    value: s,
                    reason: "row sum exceeds 1",
                });
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Number of speech tokens (rows).
    pub fn speech_len(&self) -> usize {
        self.values.rows()
    }

    /// Number of text tokens (columns).
    pub fn text_len(&self) -> usize {
        self.values.cols()
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.values
    }
}

impl<T> Deref for AlignmentMatrix<T> {
    type Target = Matrix<T>;

    fn deref(&self) -> &Matrix<T> {
        &self.values
    }
}
