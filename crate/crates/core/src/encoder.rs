//! Encoding block: channel embedding, hierarchical attention layers
//! (intra-group then global), and de-embedding to per-user `(α, λ)`.
//!
//! Many instances are encoded at once by laying their user columns side by
//! side. Attention only mixes columns inside a segment (one group for the
//! intra-group sublayer, one instance for the global sublayer) and every
//! other operation is column-wise, so batching never couples instances.

use std::ops::Range;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, LAYER_NORM_EPS};
use crate::cplx::{CMatrix, CTensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scenario::ChannelInstance;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Antenna count the embedding is sized for.
    pub n: usize,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n: 8,
            d: 128,
            layers: 2,
            heads: 4,
            d_ff: 512,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.heads == 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig(format!("encoder sizes must be positive: {self:?}")));
        }
        if self.d % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d = {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        Ok(())
    }

    /// Number of scalar parameters; depends on neither K nor M.
    pub fn param_count(&self) -> usize {
        let (n, d, f) = (self.n, self.d, self.d_ff);
        2 * n * d + d + self.layers * 2 * sublayer_count(d, f) + 3 * d + 3
    }
}

pub(crate) fn sublayer_count(d: usize, d_ff: usize) -> usize {
    4 * d * d + 2 * d * d_ff + d_ff + d + 4 * d
}

macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident { $($field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            $(pub $field: T,)*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)* }
            }

            /// Calls `f` on every field in storage order with its dotted name.
            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
                $(f(format!("{prefix}{}", stringify!($field)), &self.$field);)*
            }

            pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut T)) {
                $(f(format!("{prefix}{}", stringify!($field)), &mut self.$field);)*
            }
        }
    };
}

param_struct! {
    /// One attention sublayer: `Y = Norm(X + MHA(X))`, `Z = Norm(Y + CFF(Y))`.
    ///
    /// Head projections are stacked: rows `t·d′..(t+1)·d′` of `wq`, `wk`,
    /// `wv` and columns `t·d′..(t+1)·d′` of `wo` belong to head `t`.
    Sublayer {
        wq, wk, wv, wo,
        ff1_w, ff1_b, ff2_w, ff2_b,
        norm1_gain, norm1_bias, norm2_gain, norm2_bias,
    }
}

param_struct! {
    /// Intra-group sublayer followed by the global sublayer.
    Layer { intra, global }
}

/// All encoder parameters. `T` is [`Matrix`] for stored values and
/// [`Tensor`] once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T = Matrix> {
    pub embed_w: T,
    pub embed_b: T,
    pub layers: Vec<Layer<Sublayer<T>>>,
    pub deembed_w: T,
    pub deembed_b: T,
}

impl<T> EncoderParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderParams<U> {
        EncoderParams {
            embed_w: f(&self.embed_w),
            embed_b: f(&self.embed_b),
            layers: self
                .layers
                .iter()
                .map(|l| l.map(&mut |s: &Sublayer<T>| s.map(f)))
                .collect(),
            deembed_w: f(&self.deembed_w),
            deembed_b: f(&self.deembed_b),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        f("embed_w".into(), &self.embed_w);
        f("embed_b".into(), &self.embed_b);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit("", &mut |name, s: &'a Sublayer<T>| s.visit(&format!("layer{i}.{name}."), f));
        }
        f("deembed_w".into(), &self.deembed_w);
        f("deembed_b".into(), &self.deembed_b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut T)) {
        f("embed_w".into(), &mut self.embed_w);
        f("embed_b".into(), &mut self.embed_b);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut("", &mut |name, s: &mut Sublayer<T>| {
                s.visit_mut(&format!("layer{i}.{name}."), f)
            });
        }
        f("deembed_w".into(), &mut self.deembed_w);
        f("deembed_b".into(), &mut self.deembed_b);
    }
}

impl EncoderParams<Matrix> {
    /// Uniform(±1/√fan_in) projections, zero biases, unit norm gains.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f) = (cfg.d, cfg.d_ff);
        let layers = (0..cfg.layers)
            .map(|_| Layer {
                intra: init_sublayer(&mut rng, d, f),
                global: init_sublayer(&mut rng, d, f),
            })
            .collect();
        Ok(Self {
            embed_w: uniform(&mut rng, d, 2 * cfg.n),
            embed_b: Matrix::zeros(d, 1),
            layers,
            deembed_w: uniform(&mut rng, 3, d),
            deembed_b: Matrix::zeros(3, 1),
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> EncoderParams<Tensor<'t>> {
        self.map(&mut |m: &Matrix| tape.param(m.clone()))
    }

    pub fn count(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, m| total += m.len());
        total
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

pub(crate) fn init_sublayer(rng: &mut ChaCha8Rng, d: usize, d_ff: usize) -> Sublayer<Matrix> {
    Sublayer {
        wq: uniform(rng, d, d),
        wk: uniform(rng, d, d),
        wv: uniform(rng, d, d),
        wo: uniform(rng, d, d),
        ff1_w: uniform(rng, d_ff, d),
        ff1_b: Matrix::zeros(d_ff, 1),
        ff2_w: uniform(rng, d, d_ff),
        ff2_b: Matrix::zeros(d, 1),
        norm1_gain: Matrix::filled(d, 1, 1.0),
        norm1_bias: Matrix::zeros(d, 1),
        norm2_gain: Matrix::filled(d, 1, 1.0),
        norm2_bias: Matrix::zeros(d, 1),
    }
}

/// Column bookkeeping for a batch of instances laid side by side.
#[derive(Clone, Debug)]
pub struct BatchLayout {
    /// Columns of each instance.
    pub instances: Vec<Range<usize>>,
    /// One segment per (instance, group), in column order.
    pub groups: Rc<[Range<usize>]>,
    /// One segment per instance.
    pub whole: Rc<[Range<usize>]>,
}

impl BatchLayout {
    pub fn new(insts: &[&ChannelInstance]) -> Self {
        let mut instances = Vec::with_capacity(insts.len());
        let mut groups = Vec::new();
        let mut at = 0;
        for inst in insts {
            let start = at;
            for &k in inst.group_sizes() {
                groups.push(at..at + k);
                at += k;
            }
            instances.push(start..at);
        }
        Self {
            whole: instances.clone().into(),
            instances,
            groups: groups.into(),
        }
    }

    pub fn columns(&self) -> usize {
        self.instances.last().map_or(0, |r| r.end)
    }
}

/// `[Re H; Im H]` of every instance, side by side (`2N x ΣK`).
pub fn stacked_input(insts: &[&ChannelInstance]) -> Result<Matrix> {
    let n = insts.first().map_or(0, |i| i.antennas());
    let cols: usize = insts.iter().map(|i| i.users()).sum();
    let mut x = Matrix::zeros(2 * n, cols);
    let mut at = 0;
    for inst in insts {
        if inst.antennas() != n {
            return Err(Error::InvalidInstance(format!(
                "batch mixes {} and {} antennas",
                n,
                inst.antennas()
            )));
        }
        let h = inst.h();
        for k in 0..inst.users() {
            for r in 0..n {
                let (a, b) = h.get(r, k);
                x.set(r, at + k, a);
                x.set(n + r, at + k, b);
            }
        }
        at += inst.users();
    }
    Ok(x)
}

/// `X⁰ = W_em [Re H; Im H] + b_em`.
pub fn embed<'t>(p: &EncoderParams<Tensor<'t>>, input: Tensor<'t>) -> Result<Tensor<'t>> {
    if p.embed_w.cols() != input.rows() {
        return Err(Error::ShapeMismatch {
            op: "embed",
            lhs: p.embed_w.shape(),
            rhs: input.shape(),
        });
    }
    p.embed_w.matmul(input)?.add_col(p.embed_b)
}

/// Attention sublayer applied independently on each column segment.
pub fn self_attention<'t>(
    s: &Sublayer<Tensor<'t>>,
    heads: usize,
    x: Tensor<'t>,
    segments: Rc<[Range<usize>]>,
) -> Result<Tensor<'t>> {
    let tape = x.tape();
    let q = s.wq.matmul(x)?;
    let k = s.wk.matmul(x)?;
    let v = s.wv.matmul(x)?;
    let mixed = s.wo.matmul(tape.attention(q, k, v, heads, segments)?)?;
    let y = x.add(mixed)?.layer_norm_cols(s.norm1_gain, s.norm1_bias, LAYER_NORM_EPS)?;
    let hidden = s.ff1_w.matmul(y)?.add_col(s.ff1_b)?.relu()?;
    let ff = s.ff2_w.matmul(hidden)?.add_col(s.ff2_b)?;
    y.add(ff)?.layer_norm_cols(s.norm2_gain, s.norm2_bias, LAYER_NORM_EPS)
}

/// Intra-group attention with shared parameters, then attention across
/// all users of the instance.
pub fn hierarchical_layer<'t>(
    layer: &Layer<Sublayer<Tensor<'t>>>,
    heads: usize,
    x: Tensor<'t>,
    layout: &BatchLayout,
) -> Result<Tensor<'t>> {
    if layout.columns() != x.cols() {
        return Err(Error::InvalidInstance(format!(
            "group partition covers {} columns, input has {}",
            layout.columns(),
            x.cols()
        )));
    }
    let z = self_attention(&layer.intra, heads, x, layout.groups.clone())?;
    self_attention(&layer.global, heads, z, layout.whole.clone())
}

/// Per-user outputs: `α = row0 + i·row1`, `λ = ReLU(row2)`, as `C x 1`.
pub fn deembed<'t>(p: &EncoderParams<Tensor<'t>>, x: Tensor<'t>) -> Result<(CTensor<'t>, Tensor<'t>)> {
    let out = p.deembed_w.matmul(x)?.add_col(p.deembed_b)?.t()?;
    let alpha = CTensor::new(out.slice_cols(0, 1)?, out.slice_cols(1, 1)?)?;
    Ok((alpha, out.slice_cols(2, 1)?.relu()?))
}

/// Encoder outputs for one instance.
#[derive(Clone, Copy, Debug)]
pub struct Encoded<'t> {
    /// `K x 1` complex combination weights.
    pub alpha: CTensor<'t>,
    /// `K x 1` nonnegative multipliers.
    pub lambda: Tensor<'t>,
}

/// Encodes every instance of the batch on one tape.
pub fn encode_batch<'t>(
    tape: &'t Tape,
    p: &EncoderParams<Tensor<'t>>,
    heads: usize,
    insts: &[&ChannelInstance],
) -> Result<Vec<Encoded<'t>>> {
    let layout = BatchLayout::new(insts);
    let input = tape.constant(stacked_input(insts)?);
    let mut x = embed(p, input)?;
    for layer in &p.layers {
        x = hierarchical_layer(layer, heads, x, &layout)?;
    }
    let (alpha, lambda) = deembed(p, x)?;
    layout
        .instances
        .iter()
        .map(|r| {
            let k = r.len();
            Ok(Encoded {
                alpha: CTensor::new(alpha.re.slice_rows(r.start, k)?, alpha.im.slice_rows(r.start, k)?)?,
                lambda: lambda.slice_rows(r.start, k)?,
            })
        })
        .collect()
}

/// Plain-value encoding of one instance: `(α, λ)`.
pub fn encode(params: &EncoderParams, heads: usize, inst: &ChannelInstance) -> Result<(CMatrix, Vec<f64>)> {
    let tape = Tape::new();
    let p = params.map(&mut |m: &Matrix| tape.constant(m.clone()));
    let out = encode_batch(&tape, &p, heads, &[inst])?;
    Ok((out[0].alpha.value(), out[0].lambda.value().data().to_vec()))
}
