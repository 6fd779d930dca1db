//! Problem instances: geometry, path loss, Rayleigh fading and units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::cplx::CMatrix;
use crate::error::{Error, Result};

/// Power unit used inside the learned model and the iterative solvers.
///
/// Instances are rescaled so that every user's noise power is one unit and
/// beamformer power reads directly in milliwatts; the fixed step size of the
/// constraint layers is only meaningful on this scale.
pub const MODEL_POWER_UNIT_W: f64 = 1e-3;

/// Large-scale path loss in dB at `distance_m` meters.
pub fn pathloss_db(distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    Ok(32.6 + 36.7 * distance_m.log10())
}

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Simulation geometry and QoS targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    /// Transmit antennas.
    pub n: usize,
    /// Users per multicast group; its length is the group count.
    pub group_sizes: Vec<usize>,
    /// Per-group SINR target in dB.
    pub sinr_target_db: Vec<f64>,
    pub noise_dbm: f64,
    pub bs_xyz: [f64; 3],
    /// `[x_min, x_max, y_min, y_max]` in meters; users sit at `z = 0`.
    pub user_box: [f64; 4],
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 8,
            group_sizes: vec![4],
            sinr_target_db: vec![10.0],
            noise_dbm: -100.0,
            bs_xyz: [0.0, 0.0, 20.0],
            user_box: [85.0, 95.0, 85.0, 115.0],
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// `m` groups of `k` users each, with a common target.
    pub fn uniform(n: usize, m: usize, k: usize, sinr_db: f64) -> Self {
        Self {
            n,
            group_sizes: vec![k; m],
            sinr_target_db: vec![sinr_db; m],
            ..Self::default()
        }
    }

    pub fn groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn users(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("antenna count must be at least 1".into());
        }
        if self.group_sizes.is_empty() {
            return bad("at least one multicast group is required".into());
        }
        if self.group_sizes.contains(&0) {
            return bad("every group needs at least one user".into());
        }
        if self.sinr_target_db.len() != self.group_sizes.len() {
            return bad(format!(
                "{} SINR targets for {} groups",
                self.sinr_target_db.len(),
                self.group_sizes.len()
            ));
        }
        let [x0, x1, y0, y1] = self.user_box;
        if !(x0 < x1 && y0 < y1) {
            return bad(format!("empty user box {:?}", self.user_box));
        }
        if !self.noise_dbm.is_finite() || self.sinr_target_db.iter().any(|g| !g.is_finite()) {
            return bad("noise and SINR targets must be finite".into());
        }
        Ok(())
    }
}

/// One realization of problem (H, σ², γ).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelInstance {
    h: CMatrix,
    group_sizes: Vec<usize>,
    offsets: Vec<usize>,
    sigma2: Vec<f64>,
    gamma: Vec<f64>,
}

impl ChannelInstance {
    /// `h` is `N x K` with users of group 0 first, then group 1, and so on.
    /// `sigma2` is per user (watts), `gamma` per group (linear).
    pub fn new(h: CMatrix, group_sizes: Vec<usize>, sigma2: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        let k: usize = group_sizes.iter().sum();
        if group_sizes.is_empty() || group_sizes.contains(&0) {
            return bad(format!("invalid group sizes {group_sizes:?}"));
        }
        if h.cols() != k || h.rows() == 0 {
            return bad(format!("channel is {:?} but groups hold {k} users", h.shape()));
        }
        if sigma2.len() != k || gamma.len() != group_sizes.len() {
            return bad(format!(
                "{} noise powers / {} targets for {k} users in {} groups",
                sigma2.len(),
                gamma.len(),
                group_sizes.len()
            ));
        }
        if !h.is_finite() {
            return bad("non-finite channel".into());
        }
        if sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("noise powers must be positive".into());
        }
        if gamma.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return bad("SINR targets must be nonnegative".into());
        }
        let mut offsets = vec![0];
        for s in &group_sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Ok(Self {
            h,
            group_sizes,
            offsets,
            sigma2,
            gamma,
        })
    }

    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    pub fn antennas(&self) -> usize {
        self.h.rows()
    }

    pub fn groups(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn users(&self) -> usize {
        self.h.cols()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// Prefix sums of the group sizes, `M + 1` entries.
    pub fn group_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn group_range(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m + 1]
    }

    pub fn group_of(&self, user: usize) -> usize {
        self.offsets.partition_point(|&o| o <= user) - 1
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// SINR target of every user.
    pub fn user_gamma(&self) -> Vec<f64> {
        (0..self.users()).map(|k| self.gamma[self.group_of(k)]).collect()
    }

    /// Copy with new per-group targets (linear).
    pub fn with_gamma(&self, gamma: Vec<f64>) -> Result<Self> {
        Self::new(self.h.clone(), self.group_sizes.clone(), self.sigma2.clone(), gamma)
    }

    /// Rescale to model units: every user's noise power becomes one unit of
    /// [`MODEL_POWER_UNIT_W`], with channels scaled to keep every SINR.
    pub fn to_model_units(&self) -> Self {
        let mut h = self.h.clone();
        for k in 0..self.users() {
            let s = (MODEL_POWER_UNIT_W / self.sigma2[k]).sqrt();
            for r in 0..h.rows() {
                let (a, b) = h.get(r, k);
                h.set(r, k, (a * s, b * s));
            }
        }
        Self {
            h,
            group_sizes: self.group_sizes.clone(),
            offsets: self.offsets.clone(),
            sigma2: vec![1.0; self.users()],
            gamma: self.gamma.clone(),
        }
    }

    /// Reorder groups and users. Group `i` of the result is group
    /// `group_order[i]` of `self`; within original group `g`, the result
    /// lists users in the order `user_orders[g]` (indices local to `g`).
    pub fn permuted(&self, group_order: &[usize], user_orders: &[Vec<usize>]) -> Result<Self> {
        let cols = self.column_permutation(group_order, user_orders)?;
        let h = CMatrix::from_fn(self.antennas(), self.users(), |r, c| self.h.get(r, cols[c]));
        Self::new(
            h,
            group_order.iter().map(|&g| self.group_sizes[g]).collect(),
            cols.iter().map(|&c| self.sigma2[c]).collect(),
            group_order.iter().map(|&g| self.gamma[g]).collect(),
        )
    }

    /// For [`permuted`](Self::permuted): the original column of every new column.
    pub fn column_permutation(&self, group_order: &[usize], user_orders: &[Vec<usize>]) -> Result<Vec<usize>> {
        let m = self.groups();
        let is_perm = |p: &[usize], n: usize| {
            let mut seen = vec![false; n];
            p.len() == n && p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
        };
        if !is_perm(group_order, m) || user_orders.len() != m {
            return Err(Error::InvalidInstance("invalid group permutation".into()));
        }
        let mut cols = Vec::with_capacity(self.users());
        for &g in group_order {
            if !is_perm(&user_orders[g], self.group_sizes[g]) {
                return Err(Error::InvalidInstance(format!("invalid user permutation for group {g}")));
            }
            cols.extend(user_orders[g].iter().map(|&u| self.offsets[g] + u));
        }
        Ok(cols)
    }
}

/// Draw instance number `index` of the stream defined by `cfg.seed`.
///
/// Each `(seed, index)` pair owns its own ChaCha20 stream, so instances can
/// be generated in any order or in parallel with identical content.
pub fn sample_instance(cfg: &ScenarioConfig, index: u64) -> Result<ChannelInstance> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let k = cfg.users();
    let [x0, x1, y0, y1] = cfg.user_box;
    let [bx, by, bz] = cfg.bs_xyz;
    let mut h = CMatrix::zeros(cfg.n, k);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for user in 0..k {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let dist = ((x - bx).powi(2) + (y - by).powi(2) + bz.powi(2)).sqrt();
        let amp = db_to_lin(-pathloss_db(dist)?).sqrt();
        for r in 0..cfg.n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            h.set(r, user, (amp * half * a, amp * half * b));
        }
    }
    ChannelInstance::new(
        h,
        cfg.group_sizes.clone(),
        vec![dbm_to_watt(cfg.noise_dbm); k],
        cfg.sinr_target_db.iter().map(|&g| db_to_lin(g)).collect(),
    )
}

/// User positions of instance `index`, in the order they are drawn.
pub fn sample_positions(cfg: &ScenarioConfig, index: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let [x0, x1, y0, y1] = cfg.user_box;
    (0..cfg.users())
        .map(|_| {
            let p = (rng.random_range(x0..x1), rng.random_range(y0..y1));
            for _ in 0..2 * cfg.n {
                let _: f64 = rng.sample(StandardNormal);
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathloss_examples() {
        assert!((pathloss_db(10.0).unwrap() - 69.3).abs() < 1e-12);
        assert!((pathloss_db(100.0).unwrap() - 106.0).abs() < 1e-12);
        // independent evaluation at (85, 85, 0) from (0, 0, 20)
        let d = (85f64 * 85.0 * 2.0 + 400.0).sqrt();
        assert!((d - 121.86).abs() < 0.01);
        let want = 32.6 + 36.7 * (d.ln() / std::f64::consts::LN_10);
        assert!((pathloss_db(d).unwrap() - want).abs() < 1e-12);
        assert!((want - 109.15).abs() < 0.01);
        assert!(pathloss_db(0.0).is_err());
        assert!(pathloss_db(-3.0).is_err());
    }

    #[test]
    fn unit_conversions() {
        assert!((dbm_to_watt(-100.0) - 1e-13).abs() < 1e-25);
        assert!((dbm_to_watt(0.0) - 1e-3).abs() < 1e-18);
        assert!((db_to_lin(10.0) - 10.0).abs() < 1e-12);
        assert!((watt_to_dbm(1e-3)).abs() < 1e-12);
        assert!((lin_to_db(100.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_keyed_and_deterministic() {
        let cfg = ScenarioConfig {
            seed: 42,
            ..ScenarioConfig::default()
        };
        let a = sample_instance(&cfg, 3).unwrap();
        let b = sample_instance(&cfg, 3).unwrap();
        assert_eq!(a, b);
        // generating other indices first does not change the content
        let _ = sample_instance(&cfg, 7).unwrap();
        assert_eq!(sample_instance(&cfg, 3).unwrap(), a);
        assert_ne!(sample_instance(&cfg, 4).unwrap(), a);
    }

    #[test]
    fn positions_stay_in_box() {
        let cfg = ScenarioConfig::uniform(4, 3, 5, 10.0);
        for i in 0..200 {
            for (x, y) in sample_positions(&cfg, i) {
                assert!((85.0..=95.0).contains(&x) && (85.0..=115.0).contains(&y));
            }
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = ScenarioConfig::default();
        c.group_sizes = vec![];
        c.sinr_target_db = vec![];
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.group_sizes = vec![0];
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.n = 0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::default();
        c.user_box = [5.0, 5.0, 0.0, 1.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn instance_bookkeeping() {
        let cfg = ScenarioConfig::uniform(3, 3, 2, 10.0);
        let mut cfg = cfg;
        cfg.group_sizes = vec![1, 3, 2];
        let inst = sample_instance(&cfg, 0).unwrap();
        assert_eq!(inst.group_offsets(), &[0, 1, 4, 6]);
        assert_eq!((0..6).map(|k| inst.group_of(k)).collect::<Vec<_>>(), vec![0, 1, 1, 1, 2, 2]);
        let p = inst
            .permuted(&[2, 0, 1], &[vec![0], vec![2, 0, 1], vec![1, 0]])
            .unwrap();
        assert_eq!(p.group_sizes(), &[2, 1, 3]);
        assert_eq!(p.h().get(0, 0), inst.h().get(0, 5));
        assert_eq!(p.h().get(1, 3), inst.h().get(1, 3));
        assert!(inst.permuted(&[0, 0, 1], &[vec![0], vec![0, 1, 2], vec![0, 1]]).is_err());
    }

    #[test]
    fn model_units_preserve_snr_scale() {
        let inst = sample_instance(&ScenarioConfig::default(), 1).unwrap();
        let m = inst.to_model_units();
        assert!(m.sigma2().iter().all(|&s| s == 1.0));
        let (a, _) = inst.h().get(0, 0);
        let (b, _) = m.h().get(0, 0);
        assert!((b / a / 1e5 - 1.0).abs() < 1e-12);
    }
}
