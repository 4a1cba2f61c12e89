use sha2::{Digest, Sha256};

use super::Real;
use crate::error::{Error, Result};

/// Dense row-major matrix.
///
/// A mini-batch is stored with one column per sample, so a layer's
/// pre-activation for the whole batch is `W * X + b` with `b` broadcast
/// across columns.
#[derive(Clone, PartialEq)]
pub struct Matrix<T: Real = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> std::fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.data.len() <= 64 {
            let rows: Vec<&[T]> = (0..self.rows).map(|r| self.row(r)).collect();
            f.debug_struct("Matrix")
                .field("shape", &self.shape())
                .field("rows", &rows)
                .finish()
        } else {
            f.debug_struct("Matrix")
                .field("shape", &self.shape())
                .finish_non_exhaustive()
        }
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::ZERO)
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Single-column matrix.
    pub fn column(values: &[T]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// Converts every entry through `f64` into another precision.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Copies column `c` out.
    pub fn col(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            View::plain(self),
            View::plain(other),
            T::ONE,
            T::ZERO,
            &mut out,
        );
        Ok(out)
    }

    /// `selfᵀ * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul_tn", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            View::transposed(self),
            View::plain(other),
            T::ONE,
            T::ZERO,
            &mut out,
        );
        Ok(out)
    }

    /// `self * otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_nt", self.shape(), other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            View::plain(self),
            View::transposed(other),
            T::ONE,
            T::ZERO,
            &mut out,
        );
        Ok(out)
    }

    /// `self += alpha * a * bᵀ`, the accumulation form of an outer-product gradient.
    pub fn add_matmul_nt(&mut self, alpha: T, a: &Self, b: &Self) -> Result<()> {
        if a.cols != b.cols || self.rows != a.rows || self.cols != b.rows {
            return Err(Error::shape("add_matmul_nt", a.shape(), b.shape()));
        }
        gemm(View::plain(a), View::transposed(b), alpha, T::ONE, self);
        Ok(())
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn hadamard_assign(&mut self, other: &Self) -> Result<()> {
        self.zip_apply(other, "hadamard", |a, b| *a *= b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.zip_apply(other, "add", |a, b| *a += b)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.zip_apply(other, "axpy", |a, b| *a += alpha * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn scale_assign(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn zip_apply(&mut self, other: &Self, op: &'static str, f: impl Fn(&mut T, T)) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| f(a, b));
        Ok(())
    }

    /// Adds column vector `bias` to every column.
    pub fn add_column_assign(&mut self, bias: &Self) -> Result<()> {
        if bias.cols != 1 || bias.rows != self.rows {
            return Err(Error::shape("add_column", self.shape(), bias.shape()));
        }
        for r in 0..self.rows {
            let b = bias.data[r];
            self.row_mut(r).iter_mut().for_each(|v| *v += b);
        }
        Ok(())
    }

    /// Mean over columns, as a column vector.
    pub fn row_mean(&self) -> Self {
        let n = T::from_f64(self.cols.max(1) as f64);
        let data = (0..self.rows)
            .map(|r| self.row(r).iter().copied().sum::<T>() / n)
            .collect();
        Self {
            rows: self.rows,
            cols: 1,
            data,
        }
    }

    /// Gathers the given columns, in order, into a new matrix.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            let src = self.row(r);
            let dst = out.row_mut(r);
            for (d, &c) in dst.iter_mut().zip(idx) {
                *d = src[c];
            }
        }
        out
    }

    /// Contiguous column range `[start, end)`.
    pub fn column_range(&self, start: usize, end: usize) -> Self {
        debug_assert!(start <= end && end <= self.cols);
        let w = end - start;
        let mut out = Self::zeros(self.rows, w);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }

    /// Index of the largest entry in every column; ties go to the lowest row.
    pub fn argmax_columns(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|c| {
                let mut best = 0;
                let mut best_v = self.get(0, c);
                for r in 1..self.rows {
                    let v = self.get(r, c);
                    if v > best_v {
                        best = r;
                        best_v = v;
                    }
                }
                best
            })
            .collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::ZERO, |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
                .fold(0.0, f64::max)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == T::ZERO)
    }

    /// SHA-256 over the shape and raw bits of every entry, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        self.feed_digest(&mut h);
        hex(&h.finalize())
    }

    pub(crate) fn feed_digest(&self, h: &mut Sha256) {
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.bits().to_le_bytes());
        }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Combined checksum of a sequence of matrices.
pub fn checksum_all<'a, T: Real + 'a>(ms: impl IntoIterator<Item = &'a Matrix<T>>) -> String {
    let mut h = Sha256::new();
    for m in ms {
        m.feed_digest(&mut h);
    }
    hex(&h.finalize())
}

#[derive(Clone, Copy)]
struct View<'a, T: Real> {
    m: &'a Matrix<T>,
    transposed: bool,
}

impl<'a, T: Real> View<'a, T> {
    fn plain(m: &'a Matrix<T>) -> Self {
        Self {
            m,
            transposed: false,
        }
    }

    fn transposed(m: &'a Matrix<T>) -> Self {
        Self {
            m,
            transposed: true,
        }
    }

    fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.m.cols, self.m.rows)
        } else {
            (self.m.rows, self.m.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        let rs = self.m.cols as isize;
        if self.transposed {
            (1, rs)
        } else {
            (rs, 1)
        }
    }
}

/// `out = alpha * a * b + beta * out`. Single-threaded, so the reduction
/// order is fixed and repeated calls are bitwise reproducible.
fn gemm<T: Real>(a: View<'_, T>, b: View<'_, T>, alpha: T, beta: T, out: &mut Matrix<T>) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    assert_eq!(k, k2);
    assert_eq!((m, n), out.shape());
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.scale_assign(beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: views cover exactly the backing buffers of distinct matrices,
    // and `out` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.m.data.as_ptr(),
            rsa,
            csa,
            b.m.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_row_times_column() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]);
        let b = Matrix::from_rows(&[[3.0], [4.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Matrix::from_rows(&[[11.0]]));
    }

    #[test]
    fn matmul_by_zero_matrix() {
        let a = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 4.0, 9.0]]);
        let z = Matrix::zeros(3, 4);
        assert_eq!(a.matmul(&z).unwrap(), Matrix::zeros(2, 4));
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = Matrix::<f64>::zeros(2, 3)
            .matmul(&Matrix::zeros(2, 3))
            .unwrap_err();
        match err {
            Error::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            e => panic!("unexpected {e}"),
        }
        let msg = Matrix::<f64>::zeros(2, 3)
            .matmul(&Matrix::zeros(4, 1))
            .unwrap_err()
            .to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(4, 1)"), "{msg}");
    }

    #[test]
    fn hadamard_cases() {
        let a = Matrix::from_rows(&[[2.0, 3.0]]);
        let b = Matrix::from_rows(&[[4.0, 5.0]]);
        assert_eq!(a.hadamard(&b).unwrap(), Matrix::from_rows(&[[8.0, 15.0]]));
        assert_eq!(a.hadamard(&Matrix::filled(1, 2, 1.0)).unwrap(), a);
        assert_eq!(
            a.hadamard(&Matrix::zeros(1, 2)).unwrap(),
            Matrix::zeros(1, 2)
        );
        assert!(a.hadamard(&Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[[1.0, 0.5], [-1.0, 2.0]]);
        assert_eq!(a.matmul_tn(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        let c = Matrix::from_rows(&[[1.0, 0.0, 2.0], [3.0, 1.0, -1.0]]);
        assert_eq!(a.matmul_nt(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
        let mut acc = Matrix::filled(2, 2, 1.0);
        acc.add_matmul_nt(0.5, &a, &c).unwrap();
        let expect = a
            .matmul_nt(&c)
            .unwrap()
            .scale(0.5)
            .add(&Matrix::filled(2, 2, 1.0))
            .unwrap();
        assert_eq!(acc, expect);
    }

    #[test]
    fn argmax_ties_to_lowest_row() {
        let m = Matrix::from_rows(&[[0.5, 0.1, 0.3], [0.5, 0.9, 0.3], [0.2, 0.9, 0.3]]);
        assert_eq!(m.argmax_columns(), vec![0, 1, 0]);
    }

    #[test]
    fn checksum_tracks_bits() {
        let a = Matrix::from_rows(&[[0.0, 1.0]]);
        let b = Matrix::from_rows(&[[-0.0, 1.0]]);
        assert_eq!(a.checksum(), a.clone().checksum());
        assert_ne!(a.checksum(), b.checksum());
    }

    fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-1.0f64..1.0, rows * cols)
            .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
    }

    fn chain() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
        (1usize..=32, 1usize..=32, 1usize..=32, 1usize..=32)
            .prop_flat_map(|(m, k, l, n)| (mat(m, k), mat(k, l), mat(l, n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matmul_matches_naive_loops((a, b, _c) in chain()) {
            let fast = a.matmul(&b).unwrap();
            prop_assert!(fast.max_abs_diff(&naive(&a, &b)).unwrap() < 1e-12);
        }

        #[test]
        fn matmul_is_associative((a, b, c) in chain()) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
        }

        #[test]
        fn product_transpose_identity((a, b, _c) in chain()) {
            let lhs = a.matmul(&b).unwrap().transpose();
            let rhs = b.transpose().matmul(&a.transpose()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
