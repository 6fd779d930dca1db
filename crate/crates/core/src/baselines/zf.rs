//! Zero-forcing initialization: each group's beamformer lies in the
//! orthogonal complement of every other group's channels, points along the
//! dominant direction of its own projected channels, and is scaled so the
//! weakest user of the group meets its target.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::Tape;
use crate::cplx::{CMatrix, CTensor};
use crate::error::{Error, Result};
use crate::qos::{self, Beamformer};
use crate::scenario::ChannelInstance;

#[derive(Clone, Debug, PartialEq)]
pub struct ZfResult {
    pub w: Beamformer,
    /// Groups whose interference nullspace was empty, so a regularized
    /// projection was used instead of exact nulling.
    pub fallback_groups: Vec<usize>,
    /// All SINR targets met.
    pub feasible: bool,
}

/// Unit-norm eigenvector of the largest eigenvalue of a Hermitian matrix.
pub fn dominant_eigvec(a: &CMatrix) -> CMatrix {
    let n = a.rows();
    // real symmetric embedding [[Re, -Im], [Im, Re]]
    let emb = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (re, im) = a.get(r % n, c % n);
        match (r < n, c < n) {
            (true, true) | (false, false) => re,
            (true, false) => -im,
            (false, true) => im,
        }
    });
    let eig = SymmetricEigen::new(emb);
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top);
    let norm = v.norm();
    CMatrix::from_fn(n, 1, |r, _| (v[r] / norm, v[n + r] / norm))
}

/// Columns of `h` listed in `cols`.
fn select(h: &CMatrix, cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(h.rows(), cols.len(), |r, c| h.get(r, cols[c]))
}

fn add_identity(a: &CMatrix, s: f64) -> CMatrix {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let (re, im) = out.get(i, i);
        out.set(i, i, (re + s, im));
    }
    out
}

fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let tape = Tape::new();
    Ok(CTensor::constant(&tape, a).csolve(CTensor::constant(&tape, b))?.value())
}

/// `I − A (AᴴA)⁻¹ Aᴴ`, projector onto the orthogonal complement of `range(A)`.
fn null_projector(a: &CMatrix) -> Result<CMatrix> {
    let n = a.rows();
    let gram = a.hermitian().matmul(a)?;
    let coef = solve(&gram, &a.hermitian())?;
    let proj = a.matmul(&coef)?;
    let mut p = proj.scale(-1.0);
    for i in 0..n {
        let (re, im) = p.get(i, i);
        p.set(i, i, (re + 1.0, im));
    }
    Ok(p)
}

pub fn zf_init(inst: &ChannelInstance) -> Result<ZfResult> {
    let (n, k, m) = (inst.antennas(), inst.users(), inst.groups());
    let h = inst.h();
    let gamma = inst.user_gamma();
    let sigma2 = inst.sigma2();
    let mut w = CMatrix::zeros(n, m);
    let mut fallback = Vec::new();
    for g in 0..m {
        let own: Vec<usize> = inst.group_range(g).collect();
        let others: Vec<usize> = (0..k).filter(|u| inst.group_of(*u) != g).collect();
        let hm = select(h, &own);
        let dir = if others.is_empty() {
            dominant_eigvec(&hm.matmul(&hm.hermitian())?)
        } else if others.len() < n {
            let p = null_projector(&select(h, &others))?;
            let ph = p.matmul(&hm)?;
            dominant_eigvec(&ph.matmul(&ph.hermitian())?)
        } else {
            // maximize own-group gain against leakage plus noise: the
            // generalized eigenvector B⁻¹H_m z, z the top eigenvector of
            // H_mᴴ B⁻¹ H_m with B = H_o H_oᴴ + σ̄² I
            fallback.push(g);
            let ho = select(h, &others);
            let noise = sigma2.iter().sum::<f64>() / k as f64;
            let leak = add_identity(&ho.matmul(&ho.hermitian())?, noise);
            let l = solve(&leak, &hm)?;
            let z = dominant_eigvec(&hm.hermitian().matmul(&l)?);
            let v = l.matmul(&z)?;
            v.scale(1.0 / v.norm_sqr().sqrt())
        };
        // weakest user of the group sets the scale
        let mut c2: f64 = 0.0;
        for &u in &own {
            let gain = (0..n).fold((0.0, 0.0), |(re, im), r| {
                let (a, b) = h.get(r, u);
                let (c, d) = dir.get(r, 0);
                (re + a * c + b * d, im + a * d - b * c)
            });
            let gain = gain.0 * gain.0 + gain.1 * gain.1;
            if gain <= 0.0 {
                return Err(Error::InvalidInstance(format!("user {u} has no gain on its group's beam")));
            }
            c2 = c2.max(gamma[u] * sigma2[u] / gain);
        }
        let c = (c2 * (1.0 + super::ccp::SCALE_HEADROOM)).sqrt();
        for r in 0..n {
            let (a, b) = dir.get(r, 0);
            w.set(r, g, (c * a, c * b));
        }
    }
    let mut w = Beamformer::new(w);
    if !fallback.is_empty() {
        log::warn!("zero-forcing nullspace empty for groups {fallback:?}; using regularized directions");
        w = scale_to_targets(inst, w)?;
    }
    let feasible = qos::violation_total(inst, &w)? == 0.0;
    Ok(ZfResult {
        w,
        fallback_groups: fallback,
        feasible,
    })
}

/// Bisection on a common scale factor until every target is met. Returns
/// the largest tried scale when the targets are unreachable.
fn scale_to_targets(inst: &ChannelInstance, w: Beamformer) -> Result<Beamformer> {
    let scaled = |t: f64| Beamformer::new(w.w.scale(t));
    let ok = |t: f64| -> Result<bool> { Ok(qos::violation_total(inst, &scaled(t))? == 0.0) };
    let mut hi = 1.0;
    while !ok(hi)? {
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(scaled(hi));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(scaled(hi))
}
