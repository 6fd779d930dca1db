//! Flat-attention ablation: every user attends to every other user of the
//! instance regardless of group, then users are mean-pooled per group and
//! mapped linearly to that group's beamformer.
//!
//! The map is equivariant to permutations of all users jointly and of
//! groups, but not hierarchically equivariant: moving a user to another
//! group changes the pooled features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::cplx::CTensor;
use crate::encoder::{init_sublayer, self_attention, stacked_input, uniform, BatchLayout, Sublayer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scenario::ChannelInstance;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VanillaConfig {
    pub n: usize,
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl Default for VanillaConfig {
    fn default() -> Self {
        Self {
            n: 8,
            d: 128,
            blocks: 4,
            heads: 4,
            d_ff: 512,
        }
    }
}

impl VanillaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.heads == 0 || self.d_ff == 0 || self.d % self.heads != 0 {
            return Err(Error::InvalidConfig(format!("invalid flat transformer sizes: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VanillaParams<T = Matrix> {
    pub embed_w: T,
    pub embed_b: T,
    pub blocks: Vec<Sublayer<T>>,
    pub out_w: T,
    pub out_b: T,
}

impl<T> VanillaParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> VanillaParams<U> {
        VanillaParams {
            embed_w: f(&self.embed_w),
            embed_b: f(&self.embed_b),
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            out_w: f(&self.out_w),
            out_b: f(&self.out_b),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        f("embed_w".into(), &self.embed_w);
        f("embed_b".into(), &self.embed_b);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block{i}."), f);
        }
        f("out_w".into(), &self.out_w);
        f("out_b".into(), &self.out_b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut T)) {
        f("embed_w".into(), &mut self.embed_w);
        f("embed_b".into(), &mut self.embed_b);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("block{i}."), f);
        }
        f("out_w".into(), &mut self.out_w);
        f("out_b".into(), &mut self.out_b);
    }
}

impl VanillaParams<Matrix> {
    pub fn init(cfg: &VanillaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            embed_w: uniform(&mut rng, cfg.d, 2 * cfg.n),
            embed_b: Matrix::zeros(cfg.d, 1),
            blocks: (0..cfg.blocks).map(|_| init_sublayer(&mut rng, cfg.d, cfg.d_ff)).collect(),
            out_w: uniform(&mut rng, 2 * cfg.n, cfg.d),
            out_b: Matrix::zeros(2 * cfg.n, 1),
        })
    }
}

/// `C x G` matrix averaging the columns of each (instance, group) segment.
fn group_pooling(layout: &BatchLayout) -> Matrix {
    let mut pool = Matrix::zeros(layout.columns(), layout.groups.len());
    for (g, seg) in layout.groups.iter().enumerate() {
        let w = 1.0 / seg.len() as f64;
        for c in seg.clone() {
            pool.set(c, g, w);
        }
    }
    pool
}

/// Beamformer of every instance (`N x M` each), before any constraint steps.
pub fn forward_batch<'t>(
    tape: &'t Tape,
    p: &VanillaParams<Tensor<'t>>,
    heads: usize,
    insts: &[&ChannelInstance],
) -> Result<Vec<CTensor<'t>>> {
    let layout = BatchLayout::new(insts);
    let input = tape.constant(stacked_input(insts)?);
    if p.embed_w.cols() != input.rows() {
        return Err(Error::ShapeMismatch {
            op: "flat embed",
            lhs: p.embed_w.shape(),
            rhs: input.shape(),
        });
    }
    let mut x = p.embed_w.matmul(input)?.add_col(p.embed_b)?;
    for block in &p.blocks {
        x = self_attention(block, heads, x, layout.whole.clone())?;
    }
    let pooled = x.matmul(tape.constant(group_pooling(&layout)))?;
    let out = p.out_w.matmul(pooled)?.add_col(p.out_b)?;
    let n = out.rows() / 2;
    let mut at = 0;
    insts
        .iter()
        .map(|inst| {
            let m = inst.groups();
            let cols = out.slice_cols(at, m)?;
            at += m;
            CTensor::new(cols.slice_rows(0, n)?, cols.slice_rows(n, n)?)
        })
        .collect()
}
