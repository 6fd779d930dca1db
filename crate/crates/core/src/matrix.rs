//! Dense row-major `f64` matrices and the two kernels everything else is
//! built on: general matrix multiply and partial-pivot LU.

use crate::error::{Error, Result};
use std::fmt;

/// Largest accepted 1-norm condition estimate for a linear solve.
pub const MAX_CONDITION: f64 = 1e12;

/// Dense real matrix, row-major. Vectors are `n x 1` columns.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
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

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    /// Column vector from a slice.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Columns `start..start + len` as a new matrix.
    pub fn cols_range(&self, start: usize, len: usize) -> Self {
        Self::from_fn(self.rows, len, |r, c| self.get(r, start + c))
    }

    /// Rows `start..start + len` as a new matrix.
    pub fn rows_range(&self, start: usize, len: usize) -> Self {
        Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(false, false, 1.0, self, other, 0.0, &mut out);
        Ok(out)
    }
}

/// Shape of `op(a)` where `op` optionally transposes.
#[inline]
pub(crate) fn op_shape(m: &Matrix, trans: bool) -> (usize, usize) {
    if trans {
        (m.cols, m.rows)
    } else {
        (m.rows, m.cols)
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`. Shapes are checked by the caller.
pub(crate) fn gemm(ta: bool, tb: bool, alpha: f64, a: &Matrix, b: &Matrix, beta: f64, c: &mut Matrix) {
    let (m, k) = op_shape(a, ta);
    let (kb, n) = op_shape(b, tb);
    debug_assert_eq!(k, kb);
    debug_assert_eq!((m, n), c.shape());
    // (row stride, col stride) of op(x) in x's row-major buffer
    let strides = |x: &Matrix, t: bool| -> (isize, isize) {
        if t {
            (1, x.cols as isize)
        } else {
            (x.cols as isize, 1)
        }
    };
    let (rsa, csa) = strides(a, ta);
    let (rsb, csb) = strides(b, tb);
    if m * n * k <= 512 {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let av = a.data[(i as isize * rsa + p as isize * csa) as usize];
                    let bv = b.data[(p as isize * rsb + j as isize * csb) as usize];
                    acc += av * bv;
                }
                let slot = &mut c.data[i * n + j];
                *slot = alpha * acc + if beta == 0.0 { 0.0 } else { beta * *slot };
            }
        }
        return;
    }
    // SAFETY: the pointers and strides describe in-bounds views of the three
    // buffers, whose sizes match the (m, k), (k, n), (m, n) shapes asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Partial-pivot LU factorization `P A = L U` of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    cond: f64,
}

impl Lu {
    /// Factor `a`, rejecting exactly singular matrices and matrices whose
    /// 1-norm condition estimate exceeds [`MAX_CONDITION`].
    pub fn factor(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::ShapeMismatch {
                op: "lu",
                lhs: a.shape(),
                rhs: (a.cols, a.rows),
            });
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for r in k + 1..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { cond: f64::INFINITY });
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for r in k + 1..n {
                let f = lu[r * n + k] / pivot;
                lu[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[r * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        let mut out = Self {
            n,
            lu,
            perm,
            cond: 0.0,
        };
        out.cond = a.norm1() * out.inverse_norm1_estimate();
        if !(out.cond <= MAX_CONDITION) {
            return Err(Error::Singular { cond: out.cond });
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// 1-norm condition estimate computed at factorization time.
    pub fn condition(&self) -> f64 {
        self.cond
    }

    /// Solve `A X = B`.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let n = self.n;
        debug_assert_eq!(b.rows, n);
        let m = b.cols;
        let mut x = Matrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.data[i * m..(i + 1) * m].copy_from_slice(&b.data[p * m..(p + 1) * m]);
        }
        // forward: L has unit diagonal
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[i * n + k];
                if l != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= l * x.data[k * m + c];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu[i * n + k];
                if u != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= u * x.data[k * m + c];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..m {
                x.data[i * m + c] /= d;
            }
        }
        x
    }

    /// Solve `Aᵀ X = B`.
    pub fn solve_transposed(&self, b: &Matrix) -> Matrix {
        let n = self.n;
        debug_assert_eq!(b.rows, n);
        let m = b.cols;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ z = y, then x = Pᵀ z.
        let mut y = b.clone();
        for i in 0..n {
            for k in 0..i {
                let u = self.lu[k * n + i];
                if u != 0.0 {
                    for c in 0..m {
                        y.data[i * m + c] -= u * y.data[k * m + c];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..m {
                y.data[i * m + c] /= d;
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let l = self.lu[k * n + i];
                if l != 0.0 {
                    for c in 0..m {
                        y.data[i * m + c] -= l * y.data[k * m + c];
                    }
                }
            }
        }
        let mut x = Matrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.data[p * m..(p + 1) * m].copy_from_slice(&y.data[i * m..(i + 1) * m]);
        }
        x
    }

    /// Hager's estimator of `‖A⁻¹‖₁`.
    fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let mut x = Matrix::filled(n, 1, 1.0 / n as f64);
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.data.iter().map(|v| v.abs()).sum::<f64>();
            if !est.is_finite() {
                return f64::INFINITY;
            }
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let z = self.solve_transposed(&xi);
            let (jmax, zmax) = z
                .data
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) });
            let ztx: f64 = z.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x = Matrix::zeros(n, 1);
            x.data[jmax] = 1.0;
        }
        est
    }
}
