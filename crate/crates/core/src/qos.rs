//! Problem semantics: SINR, transmit power, the constraint-violation
//! function `V = Σ ReLU(γ − SINR)²`, its gradient, and the CV metric.
//!
//! The `*_t` functions build differentiable graphs on a tape; the plain
//! functions evaluate the same graphs on a throwaway tape.

use crate::autodiff::{Tape, Tensor};
use crate::cplx::{CMatrix, CTensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scenario::ChannelInstance;

/// Multicast beamforming matrix, one column per group.
#[derive(Clone, Debug, PartialEq)]
pub struct Beamformer {
    pub w: CMatrix,
}

impl Beamformer {
    pub fn new(w: CMatrix) -> Self {
        Self { w }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self { w: CMatrix::zeros(n, m) }
    }

    pub fn antennas(&self) -> usize {
        self.w.rows()
    }

    pub fn groups(&self) -> usize {
        self.w.cols()
    }

    /// Rescale a beamformer computed in model units to watt units.
    pub fn model_to_watts(&self) -> Self {
        Self {
            w: self.w.scale(crate::scenario::MODEL_POWER_UNIT_W.sqrt()),
        }
    }
}

/// Instance data laid out as tape constants.
#[derive(Clone, Copy)]
pub struct InstanceTensors<'t> {
    pub h: CTensor<'t>,
    /// `K x M` group membership indicator.
    pub member: Tensor<'t>,
    /// `K x M` complement of `member`.
    pub other: Tensor<'t>,
    /// `K x 1` per-user target.
    pub gamma: Tensor<'t>,
    /// `K x 1` per-user noise power.
    pub sigma2: Tensor<'t>,
    /// `1 x M` ones, for broadcasting a user column across groups.
    pub ones_m: Tensor<'t>,
}

impl<'t> InstanceTensors<'t> {
    pub fn new(tape: &'t Tape, inst: &ChannelInstance) -> Self {
        let member = membership(inst);
        let other = member.map(|x| 1.0 - x);
        Self {
            h: CTensor::constant(tape, inst.h()),
            member: tape.constant(member),
            other: tape.constant(other),
            gamma: tape.constant(Matrix::column(&inst.user_gamma())),
            sigma2: tape.constant(Matrix::column(inst.sigma2())),
            ones_m: tape.constant(Matrix::filled(1, inst.groups(), 1.0)),
        }
    }
}

/// `K x M` indicator with a one at (user, group of user).
pub fn membership(inst: &ChannelInstance) -> Matrix {
    Matrix::from_fn(inst.users(), inst.groups(), |k, m| {
        if inst.group_of(k) == m {
            1.0
        } else {
            0.0
        }
    })
}

fn check_dims(it: &InstanceTensors<'_>, w: &CTensor<'_>) -> Result<()> {
    let n = it.h.shape().0;
    let m = it.member.cols();
    if w.shape() != (n, m) {
        return Err(Error::ShapeMismatch {
            op: "beamformer",
            lhs: (n, m),
            rhs: w.shape(),
        });
    }
    Ok(())
}

/// Intermediate quantities shared by SINR, V and ∇V.
struct SinrParts<'t> {
    /// `Hᴴ W`, `K x M`.
    g: CTensor<'t>,
    /// Interference plus noise per user.
    denom: Tensor<'t>,
    sinr: Tensor<'t>,
}

fn sinr_parts<'t>(it: &InstanceTensors<'t>, w: CTensor<'t>) -> Result<SinrParts<'t>> {
    check_dims(it, &w)?;
    let g = it.h.cmatmul_h(w)?;
    let p = g.abs2()?;
    let signal = p.mul(it.member)?.sum_axis(1)?;
    let interference = p.mul(it.other)?.sum_axis(1)?;
    let denom = interference.add(it.sigma2)?;
    let sinr = signal.div(denom)?;
    Ok(SinrParts { g, denom, sinr })
}

/// Per-user SINR, `K x 1`.
pub fn sinr_t<'t>(it: &InstanceTensors<'t>, w: CTensor<'t>) -> Result<Tensor<'t>> {
    Ok(sinr_parts(it, w)?.sinr)
}

/// Per-user `ReLU(γ − SINR)`, `K x 1`.
pub fn shortfall_t<'t>(it: &InstanceTensors<'t>, w: CTensor<'t>) -> Result<Tensor<'t>> {
    it.gamma.sub(sinr_t(it, w)?)?.relu()
}

/// `V = Σ ReLU(γ − SINR)²` as a 1x1 tensor.
pub fn violation_t<'t>(it: &InstanceTensors<'t>, w: CTensor<'t>) -> Result<Tensor<'t>> {
    shortfall_t(it, w)?.square()?.sum()
}

/// `Σ_m ‖w_m‖²` as a 1x1 tensor.
pub fn power_t<'t>(w: CTensor<'t>) -> Result<Tensor<'t>> {
    w.abs2()?.sum()
}

/// Gradient of `V` with respect to `W`, as the complex matrix
/// `∂V/∂Re W + i ∂V/∂Im W` (equivalently `2 ∂V/∂W*`).
///
/// With `G = Hᴴ W`, `P = |G|²` and per-user shortfall `v`, the chain rule
/// gives `∇V = 2 H (Φ ⊙ G)` where
/// `Φ[k, j] = −2 v_k / D_k` on the user's own group and
/// `+2 v_k SINR_k / D_k` elsewhere (`D_k` is interference plus noise).
/// The result is an ordinary graph, so it can itself be differentiated.
pub fn grad_violation_t<'t>(it: &InstanceTensors<'t>, w: CTensor<'t>) -> Result<CTensor<'t>> {
    let parts = sinr_parts(it, w)?;
    let short = it.gamma.sub(parts.sinr)?.relu()?;
    let own = short.div(parts.denom)?.scale(-2.0)?;
    let cross = own.mul(parts.sinr)?.neg()?;
    let phi = own
        .matmul(it.ones_m)?
        .mul(it.member)?
        .add(cross.matmul(it.ones_m)?.mul(it.other)?)?;
    it.h.cmatmul(parts.g.mul_real(phi)?)?.scale(2.0)
}

fn with_tape<T>(
    inst: &ChannelInstance,
    w: &Beamformer,
    f: impl for<'t> FnOnce(&InstanceTensors<'t>, CTensor<'t>) -> Result<T>,
) -> Result<T> {
    let tape = Tape::new();
    let it = InstanceTensors::new(&tape, inst);
    let wt = CTensor::constant(&tape, &w.w);
    f(&it, wt)
}

/// SINR of every user, in column order of `H`.
pub fn sinr(inst: &ChannelInstance, w: &Beamformer) -> Result<Vec<f64>> {
    with_tape(inst, w, |it, wt| Ok(sinr_t(it, wt)?.value().data().to_vec()))
}

pub fn total_power(w: &Beamformer) -> f64 {
    w.w.norm_sqr()
}

/// `ReLU(γ_m − SINR_{m,k})` for user `k` of group `m`.
pub fn violation_mk(inst: &ChannelInstance, w: &Beamformer, m: usize, k: usize) -> Result<f64> {
    if m >= inst.groups() || k >= inst.group_sizes()[m] {
        return Err(Error::InvalidInstance(format!("no user {k} in group {m}")));
    }
    let s = sinr(inst, w)?;
    let u = inst.group_offsets()[m] + k;
    Ok((inst.gamma()[m] - s[u]).max(0.0))
}

/// Per-user `ReLU(γ − SINR)`.
pub fn shortfalls(inst: &ChannelInstance, w: &Beamformer) -> Result<Vec<f64>> {
    with_tape(inst, w, |it, wt| Ok(shortfall_t(it, wt)?.value().data().to_vec()))
}

pub fn violation_total(inst: &ChannelInstance, w: &Beamformer) -> Result<f64> {
    with_tape(inst, w, |it, wt| Ok(violation_t(it, wt)?.item()))
}

/// Mean relative shortfall `(1/K) Σ ReLU(γ − SINR) / γ`. Users with a zero
/// target cannot fall short and contribute zero.
pub fn cv(inst: &ChannelInstance, w: &Beamformer) -> Result<f64> {
    let v = shortfalls(inst, w)?;
    let g = inst.user_gamma();
    let total: f64 = v
        .iter()
        .zip(&g)
        .map(|(&v, &g)| if g > 0.0 { v / g } else { 0.0 })
        .sum();
    Ok(total / inst.users() as f64)
}

pub fn grad_violation(inst: &ChannelInstance, w: &Beamformer) -> Result<CMatrix> {
    with_tape(inst, w, |it, wt| Ok(grad_violation_t(it, wt)?.value()))
}

/// Closed-form optimum for one group with one user: the matched filter
/// scaled to meet the target with equality.
pub fn mrt_oracle(inst: &ChannelInstance) -> Result<(Beamformer, f64)> {
    if inst.groups() != 1 || inst.users() != 1 {
        return Err(Error::InvalidInstance(format!(
            "closed form needs one group with one user, got sizes {:?}",
            inst.group_sizes()
        )));
    }
    let h = inst.h();
    let norm2 = h.norm_sqr();
    let target = inst.gamma()[0] * inst.sigma2()[0];
    let w = h.scale(target.sqrt() / norm2);
    Ok((Beamformer::new(w), target / norm2))
}
