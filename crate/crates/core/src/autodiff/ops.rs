//! Primitive set: forward evaluation on [`Tensor`] handles plus the
//! vector-Jacobian product of each primitive.

use std::ops::Range;
use std::rc::Rc;

use super::tape::{Node, Tape, Tensor};
use crate::error::{Error, Result};
use crate::matrix::{gemm, op_shape, Lu, Matrix};

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddCol(usize, usize),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    /// Sum over axis 0, giving a `1 x cols` row.
    SumAxis0(usize),
    /// Sum over axis 1, giving a `rows x 1` column.
    SumAxis1(usize),
    SumAll(usize),
    Relu(usize),
    Exp(usize),
    Sqrt(usize),
    Square(usize),
    SoftmaxCols(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Solve { a: usize, b: usize, lu: Lu },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        segments: Rc<[Range<usize>]>,
        /// Column-stochastic weights, one `len x len` block per (segment, head).
        weights: Vec<Vec<f64>>,
    },
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch { op, lhs: a, rhs: b }
}

fn same_tape(a: &Tensor<'_>, b: &Tensor<'_>) {
    assert!(
        std::ptr::eq(a.tape, b.tape),
        "tensors recorded on different tapes"
    );
}

impl<'t> Tensor<'t> {
    fn binary(
        self,
        other: Tensor<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Tensor<'t>> {
        same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(name, a.shape(), b.shape()));
        }
        self.tape.push(name, a.zip_map(&b, f), op(self.id, other.id))
    }

    fn unary(self, name: &'static str, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Tensor<'t>> {
        let a = self.value();
        self.tape.push(name, a.map(f), op(self.id))
    }

    pub fn add(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    /// Elementwise quotient.
    pub fn div(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, "div", |a, b| a / b, Op::Div)
    }

    pub fn scale(self, s: f64) -> Result<Tensor<'t>> {
        let a = self.value();
        self.tape.push("scale", a.scale(s), Op::Scale(self.id, s))
    }

    pub fn neg(self) -> Result<Tensor<'t>> {
        self.scale(-1.0)
    }

    /// `self + col ⊗ 1ᵀ`: adds a column vector to every column.
    pub fn add_col(self, col: Tensor<'t>) -> Result<Tensor<'t>> {
        same_tape(&self, &col);
        let (a, c) = (self.value(), col.value());
        if c.shape() != (a.rows(), 1) {
            return Err(mismatch("add_col", a.shape(), c.shape()));
        }
        let mut out = (*a).clone();
        let n = a.cols();
        for (r, &cv) in c.data().iter().enumerate() {
            for v in &mut out.data_mut()[r * n..(r + 1) * n] {
                *v += cv;
            }
        }
        self.tape.push("add_col", out, Op::AddCol(self.id, col.id))
    }

    fn matmul_impl(self, other: Tensor<'t>, ta: bool, tb: bool) -> Result<Tensor<'t>> {
        same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        let (m, k) = op_shape(&a, ta);
        let (kb, n) = op_shape(&b, tb);
        if k != kb {
            return Err(mismatch("matmul", (m, k), (kb, n)));
        }
        let mut out = Matrix::zeros(m, n);
        gemm(ta, tb, 1.0, &a, &b, 0.0, &mut out);
        self.tape.push(
            "matmul",
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    pub fn matmul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.matmul_impl(other, false, false)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.matmul_impl(other, true, false)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.matmul_impl(other, false, true)
    }

    pub fn t(self) -> Result<Tensor<'t>> {
        let a = self.value();
        self.tape.push("transpose", a.transpose(), Op::Transpose(self.id))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Tensor<'t>> {
        let a = self.value();
        if start + len > a.cols() {
            return Err(mismatch("slice_cols", a.shape(), (start, len)));
        }
        self.tape
            .push("slice_cols", a.cols_range(start, len), Op::SliceCols { a: self.id, start })
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Tensor<'t>> {
        let a = self.value();
        if start + len > a.rows() {
            return Err(mismatch("slice_rows", a.shape(), (start, len)));
        }
        self.tape
            .push("slice_rows", a.rows_range(start, len), Op::SliceRows { a: self.id, start })
    }

    /// Sum over `axis` (0 collapses rows, 1 collapses columns).
    pub fn sum_axis(self, axis: usize) -> Result<Tensor<'t>> {
        let a = self.value();
        let (r, c) = a.shape();
        match axis {
            0 => {
                let mut out = Matrix::zeros(1, c);
                for i in 0..r {
                    for (o, v) in out.data_mut().iter_mut().zip(a.row(i)) {
                        *o += v;
                    }
                }
                self.tape.push("sum_axis0", out, Op::SumAxis0(self.id))
            }
            1 => {
                let out = Matrix::from_fn(r, 1, |i, _| a.row(i).iter().sum());
                self.tape.push("sum_axis1", out, Op::SumAxis1(self.id))
            }
            _ => Err(mismatch("sum_axis", a.shape(), (axis, 0))),
        }
    }

    pub fn mean_axis(self, axis: usize) -> Result<Tensor<'t>> {
        let (r, c) = self.shape();
        let n = if axis == 0 { r } else { c };
        self.sum_axis(axis)?.scale(1.0 / n as f64)
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(self) -> Result<Tensor<'t>> {
        let a = self.value();
        self.tape.push("sum", Matrix::scalar(a.sum()), Op::SumAll(self.id))
    }

    pub fn relu(self) -> Result<Tensor<'t>> {
        self.unary("relu", |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    pub fn exp(self) -> Result<Tensor<'t>> {
        self.unary("exp", f64::exp, Op::Exp)
    }

    pub fn sqrt(self) -> Result<Tensor<'t>> {
        self.unary("sqrt", f64::sqrt, Op::Sqrt)
    }

    pub fn square(self) -> Result<Tensor<'t>> {
        self.unary("square", |x| x * x, Op::Square)
    }

    /// Softmax down each column, so every column sums to one.
    pub fn softmax_cols(self) -> Result<Tensor<'t>> {
        let a = self.value();
        let (r, c) = a.shape();
        let mut out = (*a).clone();
        let mut max = vec![f64::NEG_INFINITY; c];
        for i in 0..r {
            for (m, &v) in max.iter_mut().zip(a.row(i)) {
                *m = m.max(v);
            }
        }
        let mut total = vec![0.0; c];
        let data = out.data_mut();
        for i in 0..r {
            for j in 0..c {
                let e = (data[i * c + j] - max[j]).exp();
                data[i * c + j] = e;
                total[j] += e;
            }
        }
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] /= total[j];
            }
        }
        self.tape.push("softmax_cols", out, Op::SoftmaxCols(self.id))
    }

    /// Normalize every column to zero mean and unit variance (with `eps`
    /// added to the variance), then apply the per-feature affine
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm_cols(self, gain: Tensor<'t>, bias: Tensor<'t>, eps: f64) -> Result<Tensor<'t>> {
        same_tape(&self, &gain);
        same_tape(&self, &bias);
        let x = self.value();
        let (d, c) = x.shape();
        if gain.shape() != (d, 1) || bias.shape() != (d, 1) {
            return Err(mismatch("layer_norm", x.shape(), gain.shape()));
        }
        let (gv, bv) = (gain.value(), bias.value());
        let mut mean = vec![0.0; c];
        for i in 0..d {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= d as f64);
        let mut var = vec![0.0; c];
        for i in 0..d {
            for j in 0..c {
                let z = x.get(i, j) - mean[j];
                var[j] += z * z;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / d as f64 + eps).sqrt()).collect();
        let xhat = Matrix::from_fn(d, c, |i, j| (x.get(i, j) - mean[j]) * inv_std[j]);
        let out = Matrix::from_fn(d, c, |i, j| gv.data()[i] * xhat.get(i, j) + bv.data()[i]);
        self.tape.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
        )
    }

    /// Solve `self · X = rhs` by partial-pivot LU.
    pub fn solve(self, rhs: Tensor<'t>) -> Result<Tensor<'t>> {
        same_tape(&self, &rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.rows() != a.cols() || b.rows() != a.rows() {
            return Err(mismatch("solve", a.shape(), b.shape()));
        }
        let lu = Lu::factor(&a)?;
        let x = lu.solve(&b);
        self.tape.push(
            "solve",
            x,
            Op::Solve {
                a: self.id,
                b: rhs.id,
                lu,
            },
        )
    }
}

impl Tape {
    /// Concatenate along axis 1.
    pub fn concat_cols<'t>(&'t self, parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let rows = values.first().map_or(0, |v| v.rows());
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        for v in &values {
            if v.rows() != rows {
                return Err(mismatch("concat_cols", (rows, 0), v.shape()));
            }
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for v in &values {
            for r in 0..rows {
                out.data_mut()[r * cols + off..r * cols + off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        self.push(
            "concat_cols",
            out,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
        )
    }

    /// Concatenate along axis 0.
    pub fn concat_rows<'t>(&'t self, parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let cols = values.first().map_or(0, |v| v.cols());
        let mut data = Vec::new();
        for v in &values {
            if v.cols() != cols {
                return Err(mismatch("concat_rows", (0, cols), v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(
            "concat_rows",
            Matrix::from_vec(rows, cols, data)?,
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
        )
    }

    /// Multi-head scaled dot-product attention applied independently on
    /// each column segment.
    ///
    /// `q`, `k`, `v` are `(heads · d_h) x C`; rows `h·d_h..(h+1)·d_h` belong
    /// to head `h`. Within a segment `S` and head `h` the output is
    /// `V_S · softmax_cols(K_Sᵀ Q_S / √d_h)`, so column `j` of the output is a
    /// convex combination of value columns of its own segment. `segments`
    /// must tile `0..C` in order.
    pub fn attention<'t>(
        &'t self,
        q: Tensor<'t>,
        k: Tensor<'t>,
        v: Tensor<'t>,
        heads: usize,
        segments: Rc<[Range<usize>]>,
    ) -> Result<Tensor<'t>> {
        let (qv, kv, vv) = (q.value(), k.value(), v.value());
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() {
            return Err(mismatch("attention", qv.shape(), kv.shape()));
        }
        let (rows, cols) = qv.shape();
        if heads == 0 || rows % heads != 0 {
            return Err(mismatch("attention", qv.shape(), (heads, 0)));
        }
        let mut next = 0;
        for s in segments.iter() {
            if s.start != next || s.end <= s.start {
                return Err(mismatch("attention", (cols, 0), (s.start, s.end)));
            }
            next = s.end;
        }
        if next != cols {
            return Err(mismatch("attention", (cols, 0), (next, 0)));
        }
        let dh = rows / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(rows, cols);
        let mut weights = Vec::with_capacity(segments.len() * heads);
        for seg in segments.iter() {
            let len = seg.len();
            for h in 0..heads {
                let qs = gather(&qv, h * dh, dh, seg);
                let ks = gather(&kv, h * dh, dh, seg);
                let vs = gather(&vv, h * dh, dh, seg);
                // p[i * len + j]: weight of key i for query j
                let mut p = vec![0.0; len * len];
                for j in 0..len {
                    let qj = &qs[j * dh..(j + 1) * dh];
                    let mut mx = f64::NEG_INFINITY;
                    for i in 0..len {
                        let ki = &ks[i * dh..(i + 1) * dh];
                        let a = dot(ki, qj) * scale;
                        p[i * len + j] = a;
                        mx = mx.max(a);
                    }
                    let mut tot = 0.0;
                    for i in 0..len {
                        let e = (p[i * len + j] - mx).exp();
                        p[i * len + j] = e;
                        tot += e;
                    }
                    for i in 0..len {
                        p[i * len + j] /= tot;
                    }
                }
                let mut os = vec![0.0; len * dh];
                for j in 0..len {
                    let oj = &mut os[j * dh..(j + 1) * dh];
                    for i in 0..len {
                        let w = p[i * len + j];
                        for (o, &x) in oj.iter_mut().zip(&vs[i * dh..(i + 1) * dh]) {
                            *o += w * x;
                        }
                    }
                }
                scatter_add(&mut out, h * dh, dh, seg, &os);
                weights.push(p);
            }
        }
        self.push(
            "attention",
            out,
            Op::Attention {
                q: q.id,
                k: k.id,
                v: v.id,
                heads,
                segments,
                weights,
            },
        )
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Copy rows `r0..r0+n` of the columns in `seg` into a buffer laid out one
/// column after another.
fn gather(m: &Matrix, r0: usize, n: usize, seg: &Range<usize>) -> Vec<f64> {
    let len = seg.len();
    let mut buf = vec![0.0; len * n];
    for r in 0..n {
        let row = &m.row(r0 + r)[seg.clone()];
        for (j, &x) in row.iter().enumerate() {
            buf[j * n + r] = x;
        }
    }
    buf
}

fn scatter_add(m: &mut Matrix, r0: usize, n: usize, seg: &Range<usize>, buf: &[f64]) {
    let cols = m.cols();
    let data = m.data_mut();
    for r in 0..n {
        let base = (r0 + r) * cols;
        for (j, c) in seg.clone().enumerate() {
            data[base + c] += buf[j * n + r];
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], nodes: &[Node], id: usize, contrib: impl FnOnce() -> Matrix) {
    if !nodes[id].needs_grad {
        return;
    }
    let c = contrib();
    match &mut grads[id] {
        Some(g) => g.axpy(1.0, &c),
        slot @ None => *slot = Some(c),
    }
}

impl Op {
    pub(crate) fn for_each_input(&self, mut f: impl FnMut(usize)) {
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::AddCol(a, b) => {
                f(*a);
                f(*b);
            }
            Op::MatMul { a, b, .. } | Op::Solve { a, b, .. } => {
                f(*a);
                f(*b);
            }
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SliceCols { a, .. }
            | Op::SliceRows { a, .. }
            | Op::SumAxis0(a)
            | Op::SumAxis1(a)
            | Op::SumAll(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::SoftmaxCols(a) => f(*a),
            Op::ConcatCols(ids) | Op::ConcatRows(ids) => ids.iter().copied().for_each(f),
            Op::LayerNorm { x, gain, bias, .. } => {
                f(*x);
                f(*gain);
                f(*bias);
            }
            Op::Attention { q, k, v, .. } => {
                f(*q);
                f(*k);
                f(*v);
            }
        }
    }

    /// Push `g` (the gradient of the root w.r.t. this node's output `out`)
    /// to the node's inputs.
    pub(crate) fn backward(
        &self,
        out: &Matrix,
        g: &Matrix,
        nodes: &[Node],
        grads: &mut [Option<Matrix>],
    ) -> Result<()> {
        let val = |id: usize| -> &Matrix { &nodes[id].value };
        match self {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, nodes, *a, || g.clone());
                accumulate(grads, nodes, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, nodes, *a, || g.clone());
                accumulate(grads, nodes, *b, || g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, nodes, *a, || g.zip_map(val(*b), |x, y| x * y));
                accumulate(grads, nodes, *b, || g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Div(a, b) => {
                accumulate(grads, nodes, *a, || g.zip_map(val(*b), |x, y| x / y));
                accumulate(grads, nodes, *b, || {
                    let t = g.zip_map(out, |x, y| x * y);
                    t.zip_map(val(*b), |x, y| -x / y)
                });
            }
            Op::Scale(a, s) => accumulate(grads, nodes, *a, || g.scale(*s)),
            Op::AddCol(a, c) => {
                accumulate(grads, nodes, *a, || g.clone());
                accumulate(grads, nodes, *c, || {
                    Matrix::from_fn(g.rows(), 1, |r, _| g.row(r).iter().sum())
                });
            }
            &Op::MatMul { a, b, ta, tb } => {
                accumulate(grads, nodes, a, || {
                    let av = val(a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    if ta {
                        gemm(tb, true, 1.0, val(b), g, 0.0, &mut ga);
                    } else {
                        gemm(false, !tb, 1.0, g, val(b), 0.0, &mut ga);
                    }
                    ga
                });
                accumulate(grads, nodes, b, || {
                    let bv = val(b);
                    let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                    if tb {
                        gemm(true, ta, 1.0, g, val(a), 0.0, &mut gb);
                    } else {
                        gemm(!ta, false, 1.0, val(a), g, 0.0, &mut gb);
                    }
                    gb
                });
            }
            Op::Transpose(a) => accumulate(grads, nodes, *a, || g.transpose()),
            Op::ConcatCols(ids) => {
                let mut off = 0;
                for &id in ids {
                    let w = val(id).cols();
                    accumulate(grads, nodes, id, || g.cols_range(off, w));
                    off += w;
                }
            }
            Op::ConcatRows(ids) => {
                let mut off = 0;
                for &id in ids {
                    let h = val(id).rows();
                    accumulate(grads, nodes, id, || g.rows_range(off, h));
                    off += h;
                }
            }
            &Op::SliceCols { a, start } => accumulate(grads, nodes, a, || {
                let (r, c) = val(a).shape();
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    ga.data_mut()[i * c + start..i * c + start + g.cols()].copy_from_slice(g.row(i));
                }
                ga
            }),
            &Op::SliceRows { a, start } => accumulate(grads, nodes, a, || {
                let (r, c) = val(a).shape();
                let mut ga = Matrix::zeros(r, c);
                ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                ga
            }),
            Op::SumAxis0(a) => accumulate(grads, nodes, *a, || {
                let (r, c) = val(*a).shape();
                Matrix::from_fn(r, c, |_, j| g.data()[j])
            }),
            Op::SumAxis1(a) => accumulate(grads, nodes, *a, || {
                let (r, c) = val(*a).shape();
                Matrix::from_fn(r, c, |i, _| g.data()[i])
            }),
            Op::SumAll(a) => accumulate(grads, nodes, *a, || {
                let (r, c) = val(*a).shape();
                Matrix::filled(r, c, g.data()[0])
            }),
            Op::Relu(a) => accumulate(grads, nodes, *a, || {
                g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })
            }),
            Op::Exp(a) => accumulate(grads, nodes, *a, || g.zip_map(out, |gv, y| gv * y)),
            Op::Sqrt(a) => accumulate(grads, nodes, *a, || g.zip_map(out, |gv, y| gv / (2.0 * y))),
            Op::Square(a) => accumulate(grads, nodes, *a, || g.zip_map(val(*a), |gv, x| 2.0 * gv * x)),
            Op::SoftmaxCols(a) => accumulate(grads, nodes, *a, || {
                let (r, c) = out.shape();
                let mut dots = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dots[j] += out.get(i, j) * g.get(i, j);
                    }
                }
                Matrix::from_fn(r, c, |i, j| out.get(i, j) * (g.get(i, j) - dots[j]))
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (d, c) = xhat.shape();
                accumulate(grads, nodes, *gain, || {
                    Matrix::from_fn(d, 1, |i, _| {
                        g.row(i).iter().zip(xhat.row(i)).map(|(a, b)| a * b).sum()
                    })
                });
                accumulate(grads, nodes, *bias, || Matrix::from_fn(d, 1, |i, _| g.row(i).iter().sum()));
                accumulate(grads, nodes, *x, || {
                    let gv = val(*gain);
                    let gh = Matrix::from_fn(d, c, |i, j| g.get(i, j) * gv.data()[i]);
                    let mut m1 = vec![0.0; c];
                    let mut m2 = vec![0.0; c];
                    for i in 0..d {
                        for j in 0..c {
                            m1[j] += gh.get(i, j);
                            m2[j] += gh.get(i, j) * xhat.get(i, j);
                        }
                    }
                    let n = d as f64;
                    Matrix::from_fn(d, c, |i, j| {
                        inv_std[j] * (gh.get(i, j) - m1[j] / n - xhat.get(i, j) * m2[j] / n)
                    })
                });
            }
            Op::Solve { a, b, lu } => {
                if nodes[*a].needs_grad || nodes[*b].needs_grad {
                    // X = A⁻¹B: dB = A⁻ᵀ G, dA = −dB Xᵀ
                    let gb = lu.solve_transposed(g);
                    accumulate(grads, nodes, *a, || {
                        let n = lu.dim();
                        let mut ga = Matrix::zeros(n, n);
                        gemm(false, true, -1.0, &gb, out, 0.0, &mut ga);
                        ga
                    });
                    accumulate(grads, nodes, *b, || gb);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments,
                weights,
            } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (rows, cols) = qv.shape();
                let dh = rows / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = Matrix::zeros(rows, cols);
                let mut gk = Matrix::zeros(rows, cols);
                let mut gvm = Matrix::zeros(rows, cols);
                let mut w = weights.iter();
                for seg in segments.iter() {
                    let len = seg.len();
                    for h in 0..*heads {
                        let p = w.next().expect("one weight block per segment and head");
                        let qs = gather(qv, h * dh, dh, seg);
                        let ks = gather(kv, h * dh, dh, seg);
                        let vs = gather(vv, h * dh, dh, seg);
                        let go = gather(g, h * dh, dh, seg);
                        let mut gvs = vec![0.0; len * dh];
                        let mut gl = vec![0.0; len * len];
                        for j in 0..len {
                            let goj = &go[j * dh..(j + 1) * dh];
                            for i in 0..len {
                                let pij = p[i * len + j];
                                for (o, &x) in gvs[i * dh..(i + 1) * dh].iter_mut().zip(goj) {
                                    *o += pij * x;
                                }
                                gl[i * len + j] = dot(&vs[i * dh..(i + 1) * dh], goj);
                            }
                            let s: f64 = (0..len).map(|i| p[i * len + j] * gl[i * len + j]).sum();
                            for i in 0..len {
                                gl[i * len + j] = p[i * len + j] * (gl[i * len + j] - s) * scale;
                            }
                        }
                        let mut gqs = vec![0.0; len * dh];
                        let mut gks = vec![0.0; len * dh];
                        for i in 0..len {
                            for j in 0..len {
                                let l = gl[i * len + j];
                                if l == 0.0 {
                                    continue;
                                }
                                for r in 0..dh {
                                    gqs[j * dh + r] += ks[i * dh + r] * l;
                                    gks[i * dh + r] += qs[j * dh + r] * l;
                                }
                            }
                        }
                        scatter_add(&mut gq, h * dh, dh, seg, &gqs);
                        scatter_add(&mut gk, h * dh, dh, seg, &gks);
                        scatter_add(&mut gvm, h * dh, dh, seg, &gvs);
                    }
                }
                accumulate(grads, nodes, *q, || gq);
                accumulate(grads, nodes, *k, || gk);
                accumulate(grads, nodes, *v, || gvm);
            }
        }
        Ok(())
    }
}
