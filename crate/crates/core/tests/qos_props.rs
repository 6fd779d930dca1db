use hpe_core::qos::{self, Beamformer};
use hpe_core::scenario::{sample_instance, ChannelInstance, ScenarioConfig};
use hpe_core::CMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(n: usize, sizes: &[usize], gamma_db: f64, idx: u64) -> ChannelInstance {
    let mut cfg = ScenarioConfig::uniform(n, sizes.len(), 1, gamma_db);
    cfg.group_sizes = sizes.to_vec();
    sample_instance(&cfg, idx).unwrap().to_model_units()
}

fn random_w(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Beamformer {
    Beamformer::new(CMatrix::from_fn(n, m, |_, _| {
        (scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0))
    }))
}

/// Central-difference gradient of V over Re W and Im W.
fn fd_gradient(inst: &ChannelInstance, w: &Beamformer, h: f64) -> CMatrix {
    let (n, m) = w.w.shape();
    let v = |w: &Beamformer| qos::violation_total(inst, w).unwrap();
    CMatrix::from_fn(n, m, |r, c| {
        let (a, b) = w.w.get(r, c);
        let mut part = [0.0; 2];
        for (i, p) in part.iter_mut().enumerate() {
            let mut plus = w.clone();
            let mut minus = w.clone();
            if i == 0 {
                plus.w.set(r, c, (a + h, b));
                minus.w.set(r, c, (a - h, b));
            } else {
                plus.w.set(r, c, (a, b + h));
                minus.w.set(r, c, (a, b - h));
            }
            *p = (v(&plus) - v(&minus)) / (2.0 * h);
        }
        (part[0], part[1])
    })
}

/// Smallest distance of any user's shortfall from the ReLU kink.
fn kink_margin(inst: &ChannelInstance, w: &Beamformer) -> f64 {
    let s = qos::sinr(inst, w).unwrap();
    s.iter()
        .zip(inst.user_gamma())
        .map(|(s, g)| ((g - s) / g).abs())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn violation_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for idx in 0..200 {
        let sizes = [[1, 2, 1], [2, 2, 0], [3, 0, 0]][idx % 3]
            .into_iter()
            .filter(|&k| k > 0)
            .collect::<Vec<_>>();
        let inst = instance(4, &sizes, 10.0, idx as u64);
        let w = random_w(&mut rng, 4, sizes.len(), 4.0);
        if kink_margin(&inst, &w) < 1e-3 {
            continue;
        }
        let analytic = qos::grad_violation(&inst, &w).unwrap();
        let numeric = fd_gradient(&inst, &w, 1e-6);
        let scale = numeric.re.max_abs().max(numeric.im.max_abs()).max(1e-8);
        let err = analytic
            .re
            .data()
            .iter()
            .zip(numeric.re.data())
            .chain(analytic.im.data().iter().zip(numeric.im.data()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err / scale <= 1e-5, "instance {idx}: relative error {}", err / scale);
        checked += 1;
    }
    assert!(checked > 150);
}

#[test]
fn zero_targets_give_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inst = instance(4, &[2, 2], 10.0, 0);
    let zero = inst.with_gamma(vec![0.0, 0.0]).unwrap();
    let w = random_w(&mut rng, 4, 2, 1.0);
    assert_eq!(qos::violation_total(&zero, &w).unwrap(), 0.0);
    let g = qos::grad_violation(&zero, &w).unwrap();
    assert_eq!(g.norm_sqr(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinr_is_equivariant_under_relabeling(idx in 0u64..10_000, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [2usize, 1, 3];
        let inst = instance(5, &sizes, 8.0, idx).with_gamma(vec![5.0, 10.0, 20.0]).unwrap();
        let w = random_w(&mut rng, 5, 3, 3.0);
        let mut order = vec![0usize, 1, 2];
        order.shuffle(&mut rng);
        let user_orders: Vec<Vec<usize>> = sizes
            .iter()
            .map(|&k| {
                let mut o: Vec<usize> = (0..k).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        let perm_inst = inst.permuted(&order, &user_orders).unwrap();
        let cols = inst.column_permutation(&order, &user_orders).unwrap();
        let perm_w = Beamformer::new(CMatrix::from_fn(5, 3, |r, c| w.w.get(r, order[c])));

        let s = qos::sinr(&inst, &w).unwrap();
        let ps = qos::sinr(&perm_inst, &perm_w).unwrap();
        for (new, &orig) in cols.iter().enumerate() {
            prop_assert!((ps[new] - s[orig]).abs() <= 1e-12 * s[orig].max(1.0));
        }
        let v = qos::violation_total(&inst, &w).unwrap();
        let pv = qos::violation_total(&perm_inst, &perm_w).unwrap();
        prop_assert!((v - pv).abs() <= 1e-10 * v.max(1.0));
        prop_assert!((qos::total_power(&w) - qos::total_power(&perm_w)).abs() <= 1e-12 * qos::total_power(&w));
    }

    #[test]
    fn common_phase_does_not_change_metrics(idx in 0u64..10_000, theta in -3.2f64..3.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(idx);
        let inst = instance(4, &[2, 2], 10.0, idx);
        let w = random_w(&mut rng, 4, 2, 2.0);
        let (c, s) = (theta.cos(), theta.sin());
        let rot = Beamformer::new(CMatrix::from_fn(4, 2, |r, j| {
            let (a, b) = w.w.get(r, j);
            (a * c - b * s, a * s + b * c)
        }));
        let cv = qos::cv(&inst, &w).unwrap();
        prop_assert!((cv - qos::cv(&inst, &rot).unwrap()).abs() <= 1e-12);
        prop_assert!((qos::total_power(&w) - qos::total_power(&rot)).abs() <= 1e-12 * qos::total_power(&w).max(1.0));
    }

    #[test]
    fn cv_stays_in_unit_interval(idx in 0u64..10_000, scale in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(idx ^ 0x5a);
        let inst = instance(3, &[1, 2], 12.0, idx);
        let w = random_w(&mut rng, 3, 2, scale);
        let cv = qos::cv(&inst, &w).unwrap();
        prop_assert!((0.0..=1.0).contains(&cv));
    }
}
