//! Dense row-major 2-D tensors and the grad-free arithmetic behind them.

use crate::error::{IgtError, Result};
use crate::real::Real;

/// Below this many multiply-adds a plain loop is used instead of the
/// packed kernel. The loop accumulates in ascending inner index, so small
/// products are bit-reproducible against a textbook triple loop.
const SMALL_GEMM: usize = 16_384;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Strided read-only matrix view used to feed GEMM without copying.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T: Real> MatView<'a, T> {
    pub fn of(t: &'a Tensor<T>) -> Self {
        MatView {
            data: &t.data,
            offset: 0,
            rows: t.rows,
            cols: t.cols,
            rs: t.cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatView {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Columns `start..start+len` of a row-major matrix.
    pub fn col_block(t: &'a Tensor<T>, start: usize, len: usize) -> Self {
        assert!(start + len <= t.cols);
        MatView {
            data: &t.data,
            offset: start,
            rows: t.rows,
            cols: len,
            rs: t.cols,
            cs: 1,
        }
    }

    /// Rows `r0..r1` of an existing view.
    pub fn rows(self, r0: usize, r1: usize) -> Self {
        assert!(r0 <= r1 && r1 <= self.rows);
        MatView {
            offset: self.offset + r0 * self.rs,
            rows: r1 - r0,
            ..self
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[self.offset + i * self.rs + j * self.cs]
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a * b + beta * c` where `c` is a dense row-major buffer of
/// shape `a.rows × b.cols`, starting at `c_off` with row stride `c_rs`.
pub(crate) fn gemm_into<T: Real>(
    alpha: T,
    a: MatView<'_, T>,
    b: MatView<'_, T>,
    beta: T,
    c: &mut [T],
    c_off: usize,
    c_rs: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    a.check();
    b.check();
    assert!(c_off + (m - 1) * c_rs + n <= c.len(), "gemm output out of bounds");
    if m * k * n <= SMALL_GEMM || k == 0 {
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += a.at(i, p) * b.at(p, j);
                }
                let dst = &mut c[c_off + i * c_rs + j];
                *dst = if beta == T::zero() {
                    alpha * acc
                } else {
                    alpha * acc + beta * *dst
                };
            }
        }
        return;
    }
    // SAFETY: both views were bounds-checked above, `c` is a distinct
    // mutable slice and the output extent was asserted to fit.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            c_rs as isize,
            1,
        );
    }
}

pub(crate) fn gemm<T: Real>(a: MatView<'_, T>, b: MatView<'_, T>) -> Tensor<T> {
    let mut out = Tensor::zeros(a.rows, b.cols);
    let n = b.cols;
    gemm_into(T::one(), a, b, T::zero(), &mut out.data, 0, n);
    out
}

impl<T: Real> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(1, 1, value)
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IgtError::Contract(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Builds from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(IgtError::Contract("ragged rows".into()));
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { rows, cols, data }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
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
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != rhs.rows {
            return Err(IgtError::dim("matmul", self.shape(), rhs.shape()));
        }
        Ok(gemm(MatView::of(self), MatView::of(rhs)))
    }

    /// `self · rhsᵀ`
    pub fn matmul_t(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != rhs.cols {
            return Err(IgtError::dim("matmul_t", self.shape(), rhs.shape()));
        }
        Ok(gemm(MatView::of(self), MatView::of(rhs).t()))
    }

    /// `selfᵀ · rhs`
    pub fn t_matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rows != rhs.rows {
            return Err(IgtError::dim("t_matmul", self.shape(), rhs.shape()));
        }
        Ok(gemm(MatView::of(self).t(), MatView::of(rhs)))
    }

    pub fn transpose(&self) -> Tensor<T> {
        Tensor::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    fn zip_with(&self, rhs: &Tensor<T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(IgtError::dim(op, self.shape(), rhs.shape()));
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }
    pub fn hadamard(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map(|x| x * s)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(IgtError::dim("add_bias", self.shape(), bias.shape()));
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, &b) in out.row_mut(i).iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax_rows(&self) -> Tensor<T> {
        let mut out = self.clone();
        for i in 0..out.rows {
            softmax_in_place(out.row_mut(i));
        }
        out
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn col_sums(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(1, self.cols);
        for i in 0..self.rows {
            for (acc, &x) in out.data.iter_mut().zip(self.row(i)) {
                *acc += x;
            }
        }
        out
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        if start + len > self.cols {
            return Err(IgtError::Contract(format!(
                "column slice {start}..{} out of range for {} columns",
                start + len,
                self.cols
            )));
        }
        Ok(Tensor::from_fn(self.rows, len, |i, j| self.get(i, start + j)))
    }

    pub fn concat_cols(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let rows = parts.first().map_or(0, |t| t.rows);
        if let Some(bad) = parts.iter().find(|t| t.rows != rows) {
            return Err(IgtError::dim("concat_cols", (rows, 0), bad.shape()));
        }
        let cols: usize = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(i));
            }
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Selects rows in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.as_f64().abs()))
    }

    /// Largest absolute element-wise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a.as_f64() - b.as_f64()).abs()))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, rhs: &Tensor<T>) {
        debug_assert_eq!(self.shape(), rhs.shape());
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
