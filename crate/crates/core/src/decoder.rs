//! Decoding block: beamformer construction from `(H, α, λ)` followed by
//! unrolled gradient steps on the constraint violation.

use crate::autodiff::{Tape, Tensor};
use crate::cplx::{CMatrix, CTensor};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::qos::{self, Beamformer, InstanceTensors};
use crate::scenario::ChannelInstance;

/// Step size used by the constraint layers unless configured otherwise.
pub const DEFAULT_ETA: f64 = 0.01;

/// How the `N x N` inverse of the construction step is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolvePath {
    /// Solve the `N x N` system directly.
    Direct,
    /// Solve a `K x K` system via the Woodbury identity.
    Woodbury,
    /// Woodbury when `K < 2N`, direct otherwise.
    Auto,
}

impl SolvePath {
    fn use_woodbury(self, n: usize, k: usize) -> bool {
        match self {
            SolvePath::Direct => false,
            SolvePath::Woodbury => true,
            SolvePath::Auto => k < 2 * n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub eta: f64,
    pub r_train: usize,
    pub r_test: usize,
    pub path: SolvePath,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            r_train: 5,
            r_test: 5,
            path: SolvePath::Auto,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.r_test < self.r_train {
            return Err(Error::InvalidConfig(format!(
                "r_test = {} is below r_train = {}",
                self.r_test, self.r_train
            )));
        }
        Ok(())
    }
}

/// `w_m = (I + Σ λ_k γ_k h_k h_kᴴ)⁻¹ H_m α_m` for every group.
///
/// `alpha` and `lambda` are `K x 1`. With `D = diag(λ ⊙ γ)` the Woodbury
/// path evaluates `(I + H D Hᴴ)⁻¹ = I − H D (I + Hᴴ H D)⁻¹ Hᴴ`, which only
/// needs a `K x K` solve.
pub fn construct_solution<'t>(
    it: &InstanceTensors<'t>,
    alpha: CTensor<'t>,
    lambda: Tensor<'t>,
    path: SolvePath,
) -> Result<CTensor<'t>> {
    let tape = lambda.tape();
    let (n, k) = it.h.shape();
    if alpha.shape() != (k, 1) || lambda.shape() != (k, 1) {
        return Err(Error::ShapeMismatch {
            op: "construct_solution",
            lhs: (k, 1),
            rhs: if alpha.shape() != (k, 1) { alpha.shape() } else { lambda.shape() },
        });
    }
    // block-diagonal α: column m holds α restricted to group m
    let spread = CTensor::new(
        alpha.re.matmul(it.ones_m)?.mul(it.member)?,
        alpha.im.matmul(it.ones_m)?.mul(it.member)?,
    )?;
    let x = it.h.cmatmul(spread)?;
    let weight = lambda.mul(it.gamma)?;
    // H D: scale column k of H by weight_k
    let hd = it.h.mul_real(tape.constant(Matrix::filled(n, 1, 1.0)).matmul_nt(weight)?)?;
    if path.use_woodbury(n, k) {
        let gram = it.h.cmatmul_h(it.h)?;
        let cols = tape.constant(Matrix::filled(k, 1, 1.0)).matmul_nt(weight)?;
        let system = CTensor::new(tape.constant(Matrix::identity(k)), tape.constant(Matrix::zeros(k, k)))?
            .add(gram.mul_real(cols)?)?;
        let z = system.csolve(it.h.cmatmul_h(x)?)?;
        x.sub(hd.cmatmul(z)?)
    } else {
        let system = CTensor::new(tape.constant(Matrix::identity(n)), tape.constant(Matrix::zeros(n, n)))?
            .add(hd.cmatmul(it.h.hermitian()?)?)?;
        system.csolve(x)
    }
}

/// `W − η ∇_W V`.
pub fn constraint_step<'t>(it: &InstanceTensors<'t>, w: CTensor<'t>, eta: f64) -> Result<CTensor<'t>> {
    w.sub(qos::grad_violation_t(it, w)?.scale(eta)?)
}

/// Construction followed by `steps` constraint layers sharing `eta`.
pub fn decode_t<'t>(
    it: &InstanceTensors<'t>,
    alpha: CTensor<'t>,
    lambda: Tensor<'t>,
    cfg: &DecoderConfig,
    steps: usize,
) -> Result<CTensor<'t>> {
    let mut w = construct_solution(it, alpha, lambda, cfg.path)?;
    for _ in 0..steps {
        w = constraint_step(it, w, cfg.eta)?;
    }
    Ok(w)
}

/// Plain-value decode of one instance with `steps` constraint layers.
pub fn decode(
    inst: &ChannelInstance,
    alpha: &CMatrix,
    lambda: &[f64],
    cfg: &DecoderConfig,
    steps: usize,
) -> Result<Beamformer> {
    cfg.validate()?;
    let tape = Tape::new();
    let it = InstanceTensors::new(&tape, inst);
    let a = CTensor::constant(&tape, alpha);
    let l = tape.constant(Matrix::column(lambda));
    Ok(Beamformer::new(decode_t(&it, a, l, cfg, steps)?.value()))
}

/// Plain-value construction step only.
pub fn construct(inst: &ChannelInstance, alpha: &CMatrix, lambda: &[f64], path: SolvePath) -> Result<Beamformer> {
    let tape = Tape::new();
    let it = InstanceTensors::new(&tape, inst);
    let a = CTensor::constant(&tape, alpha);
    let l = tape.constant(Matrix::column(lambda));
    Ok(Beamformer::new(construct_solution(&it, a, l, path)?.value()))
}

/// Plain-value constraint step.
pub fn step(inst: &ChannelInstance, w: &Beamformer, eta: f64) -> Result<Beamformer> {
    let g = qos::grad_violation(inst, w)?;
    let mut next = w.w.clone();
    next.re.axpy(-eta, &g.re);
    next.im.axpy(-eta, &g.im);
    Ok(Beamformer::new(next))
}

/// Runs `r_max` constraint steps from `w0`, calling `visit(r, &W)` for
/// `r = 0..=r_max`. Stops early when `visit` returns `false`.
pub fn trajectory(
    inst: &ChannelInstance,
    w0: Beamformer,
    eta: f64,
    r_max: usize,
    mut visit: impl FnMut(usize, &Beamformer) -> Result<bool>,
) -> Result<Beamformer> {
    let mut w = w0;
    if !visit(0, &w)? {
        return Ok(w);
    }
    for r in 1..=r_max {
        w = step(inst, &w, eta)?;
        if !visit(r, &w)? {
            break;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_instance, ScenarioConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_alpha(rng: &mut ChaCha8Rng, k: usize) -> CMatrix {
        CMatrix::from_fn(k, 1, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::default().validate().is_ok());
        assert!(DecoderConfig { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(DecoderConfig { r_test: 2, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_lambda_gives_group_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inst = sample_instance(&ScenarioConfig::uniform(4, 2, 2, 10.0), 0).unwrap().to_model_units();
        let alpha = rand_alpha(&mut rng, 4);
        for path in [SolvePath::Direct, SolvePath::Woodbury] {
            let w = construct(&inst, &alpha, &[0.0; 4], path).unwrap();
            for m in 0..2 {
                for r in 0..4 {
                    let (mut re, mut im) = (0.0, 0.0);
                    for k in inst.group_range(m) {
                        let (a, b) = inst.h().get(r, k);
                        let (c, d) = alpha.get(k, 0);
                        re += a * c - b * d;
                        im += a * d + b * c;
                    }
                    let (x, y) = w.w.get(r, m);
                    assert!((x - re).abs() < 1e-12 && (y - im).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_user_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for idx in 0..20 {
            let inst = sample_instance(&ScenarioConfig::uniform(5, 1, 1, 10.0), idx).unwrap().to_model_units();
            let alpha = rand_alpha(&mut rng, 1);
            let lambda = rng.random_range(0.0..3.0);
            let h = inst.h();
            let denom = 1.0 + lambda * inst.gamma()[0] * h.norm_sqr();
            let (c, d) = alpha.get(0, 0);
            for path in [SolvePath::Direct, SolvePath::Woodbury] {
                let w = construct(&inst, &alpha, &[lambda], path).unwrap();
                for r in 0..5 {
                    let (a, b) = h.get(r, 0);
                    let want = ((a * c - b * d) / denom, (a * d + b * c) / denom);
                    let got = w.w.get(r, 0);
                    assert!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_eta_and_feasible_points_are_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = sample_instance(&ScenarioConfig::uniform(4, 2, 2, 10.0), 3).unwrap().to_model_units();
        let w = Beamformer::new(CMatrix::from_fn(4, 2, |_, _| (rng.random_range(-1.0..1.0), 0.3)));
        assert_eq!(step(&inst, &w, 0.0).unwrap(), w);
        let one = sample_instance(&ScenarioConfig::uniform(4, 1, 2, 10.0), 3).unwrap().to_model_units();
        let h = one.h();
        let loud = Beamformer::new(CMatrix::from_fn(4, 1, |r, _| {
            let (a, b) = h.get(r, 0);
            let (c, d) = h.get(r, 1);
            (1e3 * (a + c), 1e3 * (b + d))
        }));
        assert_eq!(qos::violation_total(&one, &loud).unwrap(), 0.0);
        assert_eq!(step(&one, &loud, 0.01).unwrap(), loud);
        let tape = Tape::new();
        let it = InstanceTensors::new(&tape, &one);
        let mut wt = CTensor::constant(&tape, &loud.w);
        for _ in 0..5 {
            wt = constraint_step(&it, wt, 0.01).unwrap();
        }
        assert_eq!(wt.value(), loud.w);
    }

    #[test]
    fn step_reduces_violation_for_small_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for idx in 0..20 {
            let inst = sample_instance(&ScenarioConfig::uniform(4, 2, 2, 10.0), idx).unwrap().to_model_units();
            let w = Beamformer::new(CMatrix::from_fn(4, 2, |_, _| {
                (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            }));
            let v0 = qos::violation_total(&inst, &w).unwrap();
            let mut eta = 0.1;
            let mut decreased = false;
            for _ in 0..40 {
                if qos::violation_total(&inst, &step(&inst, &w, eta).unwrap()).unwrap() < v0 {
                    decreased = true;
                    break;
                }
                eta *= 0.5;
            }
            assert!(decreased || v0 == 0.0);
        }
    }

    #[test]
    fn zero_steps_is_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = sample_instance(&ScenarioConfig::uniform(4, 2, 2, 10.0), 0).unwrap().to_model_units();
        let alpha = rand_alpha(&mut rng, 4);
        let lambda = [0.1, 0.0, 0.4, 1.2];
        let cfg = DecoderConfig::default();
        assert_eq!(
            decode(&inst, &alpha, &lambda, &cfg, 0).unwrap(),
            construct(&inst, &alpha, &lambda, cfg.path).unwrap()
        );
    }

    #[test]
    fn trajectory_matches_unrolled_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = sample_instance(&ScenarioConfig::uniform(4, 2, 2, 10.0), 1).unwrap().to_model_units();
        let alpha = rand_alpha(&mut rng, 4);
        let lambda = [0.1, 0.0, 0.4, 1.2];
        let cfg = DecoderConfig::default();
        let w0 = construct(&inst, &alpha, &lambda, cfg.path).unwrap();
        let end = trajectory(&inst, w0, cfg.eta, 7, |_, _| Ok(true)).unwrap();
        let graph = decode(&inst, &alpha, &lambda, &DecoderConfig { r_test: 7, ..cfg }, 7).unwrap();
        assert_eq!(end, graph);
    }
}
