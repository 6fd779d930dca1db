//! Convex-concave procedure for QoS multicast beamforming.
//!
//! Each outer iteration replaces the signal term `|hᴴw_m|²` of every SINR
//! constraint by its tangent at the current point `W̄`,
//! `2 Re{(hᴴw̄_m)* hᴴw_m} − |hᴴw̄_m|²`, which under-estimates it. The
//! resulting convex problem (minimum power subject to the tangent
//! constraints) is solved with an augmented-Lagrangian loop whose inner
//! minimization takes gradient steps (Barzilai-Borwein lengths with an
//! Armijo safeguard) or, optionally, semismooth Newton steps. The inner solution
//! is then rescaled by a common factor so the tightest original constraint
//! is active, and accepted only if it does not increase power; every
//! returned iterate therefore satisfies the original constraints.

use nalgebra::{DMatrix, DVector};

use crate::cplx::CMatrix;
use crate::error::{Error, Result};
use crate::qos::{self, Beamformer};
use crate::scenario::ChannelInstance;

/// Method for the inner augmented-Lagrangian minimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerSolver {
    Gradient,
    Newton,
}

impl std::str::FromStr for InnerSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(InnerSolver::Gradient),
            "newton" => Ok(InnerSolver::Newton),
            _ => Err(Error::InvalidConfig(format!("unknown CCP inner solver {s:?} (expected gradient or newton)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcpConfig {
    pub max_outer: usize,
    /// Multiplier updates per outer iteration.
    pub max_multiplier_updates: usize,
    pub inner: InnerSolver,
    /// Steps per inner minimization.
    pub max_inner: usize,
    /// Relative stationarity tolerance of the inner minimization.
    pub inner_tol: f64,
    /// Tolerance on tangent-constraint violation, relative to `γσ²`.
    pub feas_tol: f64,
    /// Initial augmented-Lagrangian penalty, relative to `1/(γσ²)`.
    pub penalty: f64,
    /// Penalty growth when violation does not shrink fast enough.
    pub penalty_growth: f64,
}

impl Default for CcpConfig {
    fn default() -> Self {
        Self {
            max_outer: 10,
            max_multiplier_updates: 50,
            inner: InnerSolver::Gradient,
            max_inner: 20_000,
            inner_tol: 1e-9,
            feas_tol: 1e-9,
            penalty: 1.0,
            penalty_growth: 4.0,
        }
    }
}

impl CcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0
            || self.max_multiplier_updates == 0
            || self.max_inner == 0
            || !(self.inner_tol > 0.0 && self.feas_tol > 0.0 && self.penalty > 0.0 && self.penalty_growth > 1.0)
        {
            return Err(Error::InvalidConfig(format!("invalid CCP settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcpTrace {
    /// Power after each outer iteration, starting with the initial point.
    pub power: Vec<f64>,
    /// Whether each inner solve met its tolerances.
    pub inner_converged: Vec<bool>,
    /// Outer iterations whose candidate was rejected (no power decrease).
    pub rejected: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcpResult {
    pub w: Beamformer,
    pub trace: CcpTrace,
    /// Set when some inner solve stopped at its iteration limit.
    pub warning: bool,
}

/// Problem data over the real parametrization `x = [z_1; …; z_M]`,
/// `z_j = [Re w_j; Im w_j]`. For user `k`, `Re(h_kᴴ w_j) = u_k·z_j` and
/// `Im(h_kᴴ w_j) = v_k·z_j` with `u_k = [Re h_k; Im h_k]`,
/// `v_k = [−Im h_k; Re h_k]`.
struct Problem {
    n: usize,
    m: usize,
    u: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    group: Vec<usize>,
    /// `γ_k σ²_k`.
    floor: Vec<f64>,
    gamma: Vec<f64>,
}

/// Augmented-Lagrangian state of one convex subproblem.
struct Subproblem<'a> {
    p: &'a Problem,
    /// Own-group gain `(Re, Im)` of each user at the expansion point.
    anchor: Vec<(f64, f64)>,
    mu: Vec<f64>,
    rho: f64,
}

impl Problem {
    fn new(inst: &ChannelInstance) -> Self {
        let hm = inst.h();
        let (n, k) = (inst.antennas(), inst.users());
        let gamma = inst.user_gamma();
        let u = (0..k)
            .map(|c| DVector::from_fn(2 * n, |r, _| if r < n { hm.get(r, c).0 } else { hm.get(r - n, c).1 }))
            .collect();
        let v = (0..k)
            .map(|c| DVector::from_fn(2 * n, |r, _| if r < n { -hm.get(r, c).1 } else { hm.get(r - n, c).0 }))
            .collect();
        Self {
            n,
            m: inst.groups(),
            u,
            v,
            group: (0..k).map(|c| inst.group_of(c)).collect(),
            floor: (0..k).map(|c| gamma[c] * inst.sigma2()[c]).collect(),
            gamma,
        }
    }

    fn users(&self) -> usize {
        self.u.len()
    }

    fn block<'x>(&self, x: &'x DVector<f64>, j: usize) -> nalgebra::DVectorView<'x, f64> {
        x.rows(2 * self.n * j, 2 * self.n)
    }

    /// `(Re, Im)` of `h_kᴴ w_j`.
    fn gain(&self, x: &DVector<f64>, k: usize, j: usize) -> (f64, f64) {
        let z = self.block(x, j);
        (self.u[k].dot(&z), self.v[k].dot(&z))
    }

    fn to_vec(&self, w: &Beamformer) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(2 * n * self.m, |i, _| {
            let (j, r) = (i / (2 * n), i % (2 * n));
            let c = w.w.get(r % n, j);
            if r < n {
                c.0
            } else {
                c.1
            }
        })
    }

    fn to_beamformer(&self, x: &DVector<f64>) -> Beamformer {
        let n = self.n;
        Beamformer::new(CMatrix::from_fn(n, self.m, |r, j| {
            (x[2 * n * j + r], x[2 * n * j + n + r])
        }))
    }
}

impl Subproblem<'_> {
    /// Tangent constraint `g_k(x) ≤ 0`.
    fn constraint(&self, x: &DVector<f64>, k: usize) -> f64 {
        let p = self.p;
        let own = p.group[k];
        let interference: f64 = (0..p.m)
            .filter(|&j| j != own)
            .map(|j| {
                let (a, b) = p.gain(x, k, j);
                a * a + b * b
            })
            .sum();
        let (ar, ai) = self.anchor[k];
        let (gr, gi) = p.gain(x, k, own);
        p.gamma[k] * interference + p.floor[k] - (2.0 * (ar * gr + ai * gi) - (ar * ar + ai * ai))
    }

    fn constraints(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.p.users()).map(|k| self.constraint(x, k)).collect()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let mut f = x.norm_squared();
        for k in 0..self.p.users() {
            let t = (self.constraint(x, k) + self.mu[k] / self.rho).max(0.0);
            f += 0.5 * self.rho * t * t - self.mu[k] * self.mu[k] / (2.0 * self.rho);
        }
        f
    }

    /// Gradient and generalized Hessian of the augmented Lagrangian.
    fn derivatives(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let dim = x.len();
        let bn = 2 * p.n;
        let mut grad = x * 2.0;
        let mut hess = DMatrix::<f64>::identity(dim, dim) * 2.0;
        for k in 0..p.users() {
            let t = (self.constraint(x, k) + self.mu[k] / self.rho).max(0.0);
            if t == 0.0 {
                continue;
            }
            let own = p.group[k];
            let mut dg = DVector::<f64>::zeros(dim);
            for j in 0..p.m {
                let seg = if j == own {
                    let (ar, ai) = self.anchor[k];
                    (&p.u[k] * ar + &p.v[k] * ai) * -2.0
                } else {
                    let (gr, gi) = p.gain(x, k, j);
                    let curv = 2.0 * self.rho * t * p.gamma[k];
                    let mut blk = hess.view_mut((bn * j, bn * j), (bn, bn));
                    blk.ger(curv, &p.u[k], &p.u[k], 1.0);
                    blk.ger(curv, &p.v[k], &p.v[k], 1.0);
                    (&p.u[k] * gr + &p.v[k] * gi) * (2.0 * p.gamma[k])
                };
                dg.rows_mut(bn * j, bn).copy_from(&seg);
            }
            grad.axpy(self.rho * t, &dg, 1.0);
            hess.ger(self.rho, &dg, &dg, 1.0);
        }
        (grad, hess)
    }

    /// `∇L` only, for the gradient method.
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = self.p;
        let bn = 2 * p.n;
        let mut grad = x * 2.0;
        for k in 0..p.users() {
            let t = (self.constraint(x, k) + self.mu[k] / self.rho).max(0.0);
            if t == 0.0 {
                continue;
            }
            let own = p.group[k];
            for j in 0..p.m {
                let seg = if j == own {
                    let (ar, ai) = self.anchor[k];
                    (&p.u[k] * ar + &p.v[k] * ai) * -2.0
                } else {
                    let (gr, gi) = p.gain(x, k, j);
                    (&p.u[k] * gr + &p.v[k] * gi) * (2.0 * p.gamma[k])
                };
                grad.rows_mut(bn * j, bn).axpy(self.rho * t, &seg, 1.0);
            }
        }
        grad
    }

    fn stationary(&self, grad: &DVector<f64>, x: &DVector<f64>, cfg: &CcpConfig) -> bool {
        grad.norm() <= cfg.inner_tol * (1.0 + x.norm())
    }

    /// Minimizes the augmented Lagrangian from `x`. Returns whether
    /// stationarity was reached within the step budget.
    fn minimize(&self, x: &mut DVector<f64>, cfg: &CcpConfig) -> bool {
        match cfg.inner {
            InnerSolver::Gradient => self.minimize_gradient(x, cfg),
            InnerSolver::Newton => self.minimize_newton(x, cfg),
        }
    }

    /// Barzilai-Borwein gradient steps with a nonmonotone Armijo test
    /// against the largest of the last few objective values.
    fn minimize_gradient(&self, x: &mut DVector<f64>, cfg: &CcpConfig) -> bool {
        const MEMORY: usize = 10;
        let mut recent = std::collections::VecDeque::from([self.value(x)]);
        let mut grad = self.gradient(x);
        // the curvature of ‖x‖² bounds the first step length
        let mut step = 0.5;
        for _ in 0..cfg.max_inner {
            if self.stationary(&grad, x, cfg) {
                return true;
            }
            let gg = grad.norm_squared();
            let reference = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut t = step;
            let (next, f_next) = loop {
                let trial = &*x - &grad * t;
                let ft = self.value(&trial);
                if ft <= reference - 1e-4 * t * gg {
                    break (trial, ft);
                }
                t *= 0.5;
                if t < 1e-20 {
                    return false;
                }
            };
            let g_next = self.gradient(&next);
            let s = &next - &*x;
            let y = &g_next - &grad;
            let sy = s.dot(&y);
            step = if sy > 0.0 { s.norm_squared() / sy } else { 2.0 * t };
            *x = next;
            grad = g_next;
            if recent.len() == MEMORY {
                recent.pop_front();
            }
            recent.push_back(f_next);
        }
        false
    }

    fn minimize_newton(&self, x: &mut DVector<f64>, cfg: &CcpConfig) -> bool {
        let mut f = self.value(x);
        for _ in 0..cfg.max_inner {
            let (grad, hess) = self.derivatives(x);
            if self.stationary(&grad, x, cfg) {
                return true;
            }
            let Some(chol) = hess.cholesky() else {
                return false;
            };
            let dir = -chol.solve(&grad);
            let slope = grad.dot(&dir);
            // near the optimum the predicted decrease is below the rounding
            // of `f`; without this slack the search shrinks `t` to nothing
            let noise = 16.0 * f64::EPSILON * f.abs();
            let mut t = 1.0;
            loop {
                let trial = &*x + &dir * t;
                let ft = self.value(&trial);
                if ft <= f + 1e-4 * t * slope + noise {
                    *x = trial;
                    f = ft;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return false;
                }
            }
        }
        false
    }
}

/// Relative power margin added when scaling onto the constraint boundary,
/// so rounding in the SINR evaluation cannot leave a target just missed.
pub const SCALE_HEADROOM: f64 = 1e-12;

/// Smallest common scale making every original SINR constraint hold, if
/// one exists (SINR is increasing in a common scale factor).
pub fn rescale_to_feasible(inst: &ChannelInstance, w: &Beamformer) -> Result<Option<Beamformer>> {
    let p = Problem::new(inst);
    let x = p.to_vec(w);
    let mut c2: f64 = 0.0;
    for k in 0..inst.users() {
        let own = p.group[k];
        let mut s = 0.0;
        let mut i = 0.0;
        for j in 0..p.m {
            let (a, b) = p.gain(&x, k, j);
            let e = a * a + b * b;
            if j == own {
                s += e;
            } else {
                i += e;
            }
        }
        let margin = s - p.gamma[k] * i;
        if p.floor[k] > 0.0 {
            if margin <= 0.0 {
                return Ok(None);
            }
            c2 = c2.max(p.floor[k] / margin);
        }
    }
    let c = (c2 * (1.0 + SCALE_HEADROOM)).sqrt();
    let mut out = Beamformer::new(w.w.scale(c));
    let mut guard = 0;
    while qos::violation_total(inst, &out)? > 0.0 {
        out = Beamformer::new(out.w.scale(1.0 + 1e-12));
        guard += 1;
        if guard > 100 {
            return Ok(None);
        }
    }
    Ok(Some(out))
}

/// Tangent of `|hᴴw|²` at `w̄`, evaluated at `w`.
pub fn linearized_gain(h: &CMatrix, w_bar: &CMatrix, w: &CMatrix) -> Result<f64> {
    let a = h.hermitian().matmul(w_bar)?.get(0, 0);
    let b = h.hermitian().matmul(w)?.get(0, 0);
    Ok(2.0 * (a.0 * b.0 + a.1 * b.1) - (a.0 * a.0 + a.1 * a.1))
}

pub fn ccp_solve(inst: &ChannelInstance, init: &Beamformer, cfg: &CcpConfig) -> Result<CcpResult> {
    cfg.validate()?;
    if init.w.shape() != (inst.antennas(), inst.groups()) {
        return Err(Error::ShapeMismatch {
            op: "ccp_solve",
            lhs: (inst.antennas(), inst.groups()),
            rhs: init.w.shape(),
        });
    }
    let p = Problem::new(inst);
    if qos::violation_total(inst, init)? > 0.0 {
        return Err(Error::InvalidInstance("CCP needs a feasible starting point".into()));
    }
    let mut current = init.clone();
    let mut trace = CcpTrace {
        power: vec![qos::total_power(&current)],
        inner_converged: Vec::new(),
        rejected: 0,
    };
    let floor_scale = p.floor.iter().cloned().fold(0.0, f64::max).max(1e-300);
    for _ in 0..cfg.max_outer {
        let x0 = p.to_vec(&current);
        let mut sub = Subproblem {
            p: &p,
            anchor: (0..p.users()).map(|k| p.gain(&x0, k, p.group[k])).collect(),
            mu: vec![0.0; p.users()],
            rho: cfg.penalty / floor_scale,
        };
        let mut x = x0;
        let mut converged = false;
        let mut last_viol = f64::INFINITY;
        for _ in 0..cfg.max_multiplier_updates {
            let inner_ok = sub.minimize(&mut x, cfg);
            let cons = sub.constraints(&x);
            let viol = cons.iter().cloned().fold(0.0, f64::max);
            for (m, c) in sub.mu.iter_mut().zip(&cons) {
                *m = (*m + sub.rho * c).max(0.0);
            }
            let slack = cons.iter().zip(&sub.mu).map(|(c, m)| (c * m).abs()).fold(0.0, f64::max);
            let scale = floor_scale * x.norm_squared().max(1.0);
            if inner_ok && viol <= cfg.feas_tol * floor_scale && slack <= cfg.feas_tol * scale {
                converged = true;
                break;
            }
            if viol > 0.25 * last_viol {
                sub.rho *= cfg.penalty_growth;
            }
            last_viol = viol;
        }
        trace.inner_converged.push(converged);
        let candidate = p.to_beamformer(&x);
        let accepted = match rescale_to_feasible(inst, &candidate)? {
            Some(c) if qos::total_power(&c) <= qos::total_power(&current) => Some(c),
            _ => None,
        };
        match accepted {
            Some(c) => {
                let gain = qos::total_power(&current) - qos::total_power(&c);
                current = c;
                trace.power.push(qos::total_power(&current));
                if gain <= 1e-12 * qos::total_power(&current) {
                    break;
                }
            }
            None => {
                trace.rejected += 1;
                trace.power.push(qos::total_power(&current));
                break;
            }
        }
    }
    let warning = trace.inner_converged.iter().any(|c| !c);
    if warning {
        log::debug!("CCP inner solver hit its iteration limit on some outer iterations");
    }
    Ok(CcpResult {
        w: current,
        trace,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::zf::zf_init;
    use crate::scenario::{sample_instance, ScenarioConfig};

    #[test]
    fn tangent_is_tight_at_expansion_point() {
        let inst = sample_instance(&ScenarioConfig::uniform(4, 1, 1, 10.0), 0).unwrap().to_model_units();
        let h = inst.h().cols_range(0, 1);
        let w_bar = CMatrix::from_fn(4, 1, |r, _| (r as f64 - 1.5, 0.3 * r as f64));
        let exact = {
            let g = h.hermitian().matmul(&w_bar).unwrap().get(0, 0);
            g.0 * g.0 + g.1 * g.1
        };
        assert!((linearized_gain(&h, &w_bar, &w_bar).unwrap() - exact).abs() <= 1e-12 * exact);
        let w = w_bar.scale(1.7);
        let g = h.hermitian().matmul(&w).unwrap().get(0, 0);
        assert!(linearized_gain(&h, &w_bar, &w).unwrap() <= g.0 * g.0 + g.1 * g.1);
    }

    #[test]
    fn single_user_reaches_matched_filter_power() {
        for idx in 0..5 {
            let inst = sample_instance(&ScenarioConfig::uniform(8, 1, 1, 10.0), idx).unwrap().to_model_units();
            let zf = zf_init(&inst).unwrap();
            let out = ccp_solve(&inst, &zf.w, &CcpConfig::default()).unwrap();
            let (_, p_opt) = qos::mrt_oracle(&inst).unwrap();
            assert!((qos::total_power(&out.w) / p_opt - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn power_never_increases_and_stays_feasible() {
        for idx in 0..5 {
            let inst = sample_instance(&ScenarioConfig::uniform(8, 2, 2, 10.0), idx).unwrap().to_model_units();
            let zf = zf_init(&inst).unwrap();
            let out = ccp_solve(&inst, &zf.w, &CcpConfig::default()).unwrap();
            for w in out.trace.power.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9));
            }
            assert_eq!(qos::violation_total(&inst, &out.w).unwrap(), 0.0);
            assert!(qos::total_power(&out.w) <= qos::total_power(&zf.w) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn inner_solvers_agree() {
        for idx in 0..5 {
            let inst = sample_instance(&ScenarioConfig::uniform(8, 2, 2, 10.0), idx).unwrap().to_model_units();
            let zf = zf_init(&inst).unwrap();
            let grad = ccp_solve(&inst, &zf.w, &CcpConfig::default()).unwrap();
            let newton_cfg = CcpConfig { inner: InnerSolver::Newton, max_inner: 100, ..CcpConfig::default() };
            let newton = ccp_solve(&inst, &zf.w, &newton_cfg).unwrap();
            let (a, b) = (qos::total_power(&grad.w), qos::total_power(&newton.w));
            assert!((a / b - 1.0).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
