//! Complex matrices as `(re, im)` pairs of real matrices.
//!
//! [`CMatrix`] is the plain value type; [`CTensor`] is the same pair living
//! on a tape, so every complex operation lowers to real primitives and
//! inherits their gradients.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    pub re: Matrix,
    pub im: Matrix,
}

impl CMatrix {
    pub fn new(re: Matrix, im: Matrix) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "cmatrix",
                lhs: re.shape(),
                rhs: im.shape(),
            });
        }
        Ok(Self { re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Matrix::zeros(rows, cols),
            im: Matrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            re: Matrix::identity(n),
            im: Matrix::zeros(n, n),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let (a, b) = f(r, c);
                out.re.set(r, c, a);
                out.im.set(r, c, b);
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.re.rows()
    }

    pub fn cols(&self) -> usize {
        self.re.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.re.shape()
    }

    pub fn get(&self, r: usize, c: usize) -> (f64, f64) {
        (self.re.get(r, c), self.im.get(r, c))
    }

    pub fn set(&mut self, r: usize, c: usize, (a, b): (f64, f64)) {
        self.re.set(r, c, a);
        self.im.set(r, c, b);
    }

    pub fn cols_range(&self, start: usize, len: usize) -> Self {
        Self {
            re: self.re.cols_range(start, len),
            im: self.im.cols_range(start, len),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            re: self.re.scale(s),
            im: self.im.scale(s),
        }
    }

    /// Sum of squared moduli of all entries.
    pub fn norm_sqr(&self) -> f64 {
        let sq = |m: &Matrix| m.data().iter().map(|x| x * x).sum::<f64>();
        sq(&self.re) + sq(&self.im)
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn hermitian(&self) -> Self {
        Self {
            re: self.re.transpose(),
            im: self.im.transpose().scale(-1.0),
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let re = self.re.matmul(&other.re)?;
        let mut re2 = self.im.matmul(&other.im)?;
        re2 = re.zip_map(&re2, |a, b| a - b);
        let im = self.re.matmul(&other.im)?;
        let im2 = self.im.matmul(&other.re)?;
        Ok(Self {
            re: re2,
            im: im.zip_map(&im2, |a, b| a + b),
        })
    }
}

/// Complex tensor on a tape.
#[derive(Clone, Copy, Debug)]
pub struct CTensor<'t> {
    pub re: Tensor<'t>,
    pub im: Tensor<'t>,
}

impl<'t> CTensor<'t> {
    pub fn new(re: Tensor<'t>, im: Tensor<'t>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "ctensor",
                lhs: re.shape(),
                rhs: im.shape(),
            });
        }
        Ok(Self { re, im })
    }

    pub fn constant(tape: &'t Tape, m: &CMatrix) -> Self {
        Self {
            re: tape.constant(m.re.clone()),
            im: tape.constant(m.im.clone()),
        }
    }

    pub fn param(tape: &'t Tape, m: &CMatrix) -> Self {
        Self {
            re: tape.param(m.re.clone()),
            im: tape.param(m.im.clone()),
        }
    }

    pub fn value(&self) -> CMatrix {
        CMatrix {
            re: (*self.re.value()).clone(),
            im: (*self.im.value()).clone(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.re.shape()
    }

    pub fn tape(&self) -> &'t Tape {
        self.re.tape()
    }

    pub fn add(self, other: Self) -> Result<Self> {
        Ok(Self {
            re: self.re.add(other.re)?,
            im: self.im.add(other.im)?,
        })
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        Ok(Self {
            re: self.re.sub(other.re)?,
            im: self.im.sub(other.im)?,
        })
    }

    pub fn scale(self, s: f64) -> Result<Self> {
        Ok(Self {
            re: self.re.scale(s)?,
            im: self.im.scale(s)?,
        })
    }

    /// Multiply both parts elementwise by a real tensor of the same shape.
    pub fn mul_real(self, r: Tensor<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.mul(r)?,
            im: self.im.mul(r)?,
        })
    }

    /// Right-multiply by a real matrix.
    pub fn matmul_real(self, r: Tensor<'t>) -> Result<Self> {
        Ok(Self {
            re: self.re.matmul(r)?,
            im: self.im.matmul(r)?,
        })
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            re: self.re.slice_cols(start, len)?,
            im: self.im.slice_cols(start, len)?,
        })
    }

    /// `self · other`.
    pub fn cmatmul(self, other: Self) -> Result<Self> {
        let (ar, ai, br, bi) = (self.re, self.im, other.re, other.im);
        Ok(Self {
            re: ar.matmul(br)?.sub(ai.matmul(bi)?)?,
            im: ar.matmul(bi)?.add(ai.matmul(br)?)?,
        })
    }

    /// `selfᴴ · other` without materializing the conjugate transpose.
    pub fn cmatmul_h(self, other: Self) -> Result<Self> {
        let (ar, ai, br, bi) = (self.re, self.im, other.re, other.im);
        Ok(Self {
            re: ar.matmul_tn(br)?.add(ai.matmul_tn(bi)?)?,
            im: ar.matmul_tn(bi)?.sub(ai.matmul_tn(br)?)?,
        })
    }

    /// Conjugate transpose.
    pub fn hermitian(self) -> Result<Self> {
        Ok(Self {
            re: self.re.t()?,
            im: self.im.t()?.neg()?,
        })
    }

    /// Solve `self · X = rhs` through the real block system
    /// `[[re, −im], [im, re]] · [Xre; Xim] = [Bre; Bim]`.
    pub fn csolve(self, rhs: Self) -> Result<Self> {
        let (n, m) = self.shape();
        if n != m || rhs.shape().0 != n {
            return Err(Error::ShapeMismatch {
                op: "csolve",
                lhs: (n, m),
                rhs: rhs.shape(),
            });
        }
        let tape = self.tape();
        let top = tape.concat_cols(&[self.re, self.im.neg()?])?;
        let bottom = tape.concat_cols(&[self.im, self.re])?;
        let block = tape.concat_rows(&[top, bottom])?;
        let b = tape.concat_rows(&[rhs.re, rhs.im])?;
        let x = block.solve(b)?;
        Ok(Self {
            re: x.slice_rows(0, n)?,
            im: x.slice_rows(n, n)?,
        })
    }

    /// Elementwise squared modulus.
    pub fn abs2(self) -> Result<Tensor<'t>> {
        self.re.square()?.add(self.im.square()?)
    }
}

/// `|aᴴ b|²` for two column vectors of equal length.
pub fn cabs2<'t>(a: CTensor<'t>, b: CTensor<'t>) -> Result<Tensor<'t>> {
    let (la, ca) = a.shape();
    let (lb, cb) = b.shape();
    if ca != 1 || cb != 1 || la != lb {
        return Err(Error::ShapeMismatch {
            op: "cabs2",
            lhs: (la, ca),
            rhs: (lb, cb),
        });
    }
    a.cmatmul_h(b)?.abs2()
}
