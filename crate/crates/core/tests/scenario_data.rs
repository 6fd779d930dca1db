use hpe_core::dataset;
use hpe_core::scenario::{db_to_lin, pathloss_db, sample_positions, sample_instance, ScenarioConfig};
use proptest::prelude::*;

#[test]
fn small_scale_fading_has_unit_power() {
    let cfg = ScenarioConfig::uniform(8, 1, 4, 10.0);
    let [bx, by, bz] = cfg.bs_xyz;
    let (mut sum, mut count) = (0.0, 0usize);
    let mut sum_re_sq = 0.0;
    for idx in 0..3200 {
        let inst = sample_instance(&cfg, idx).unwrap();
        let pos = sample_positions(&cfg, idx);
        for (k, &(x, y)) in pos.iter().enumerate() {
            let d = ((x - bx).powi(2) + (y - by).powi(2) + bz * bz).sqrt();
            let gain = db_to_lin(-pathloss_db(d).unwrap());
            for r in 0..8 {
                let (a, b) = inst.h().get(r, k);
                sum += (a * a + b * b) / gain;
                sum_re_sq += a * a / gain;
                count += 1;
            }
        }
    }
    assert!(count >= 100_000);
    let mean = sum / count as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean |g|^2 = {mean}");
    // circular symmetry: half the power in each component
    let re_share = sum_re_sq / sum;
    assert!((re_share - 0.5).abs() < 0.01, "real share {re_share}");
}

#[test]
fn channel_energy_follows_pathloss() {
    let mut cfg = ScenarioConfig::uniform(8, 1, 1, 10.0);
    cfg.user_box = [90.0, 90.0 + 1e-9, 100.0, 100.0 + 1e-9];
    let d = (90.0f64.powi(2) + 100.0f64.powi(2) + 20.0f64.powi(2)).sqrt();
    let want = 8.0 * db_to_lin(-pathloss_db(d).unwrap());
    let runs = 4000;
    let mean: f64 = (0..runs)
        .map(|i| sample_instance(&cfg, i).unwrap().h().norm_sqr())
        .sum::<f64>()
        / runs as f64;
    assert!((mean / want - 1.0).abs() < 0.03, "mean {mean} want {want}");
}

#[test]
fn instances_are_keyed_not_sequential() {
    let cfg = ScenarioConfig::uniform(4, 2, 3, 10.0);
    let forward: Vec<_> = (0..10).map(|i| sample_instance(&cfg, i).unwrap()).collect();
    for i in (0..10).rev() {
        assert_eq!(sample_instance(&cfg, i).unwrap(), forward[i as usize]);
    }
    assert_ne!(forward[0], forward[1]);
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(sample_instance(&other, 0).unwrap(), forward[0]);
}

fn arb_config() -> impl Strategy<Value = (ScenarioConfig, u64)> {
    (
        1usize..6,
        proptest::collection::vec(1usize..4, 1..4),
        -5.0f64..20.0,
        any::<u64>(),
        0u64..1000,
    )
        .prop_map(|(n, sizes, gamma_db, seed, idx)| {
            let mut cfg = ScenarioConfig::uniform(n, sizes.len(), 1, gamma_db);
            cfg.group_sizes = sizes;
            cfg.seed = seed;
            (cfg, idx)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_format_round_trips_exactly((cfg, idx) in arb_config()) {
        let inst = sample_instance(&cfg, idx).unwrap();
        let mut buf = Vec::new();
        dataset::write_text(&mut buf, &[inst.clone(), inst.clone()]).unwrap();
        let back = dataset::read_text(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 2);
        // channels are stored exactly; targets and noise pass through dB
        for b in &back {
            prop_assert_eq!(b.h(), inst.h());
            prop_assert_eq!(b.group_sizes(), inst.group_sizes());
            for (x, y) in b.gamma().iter().zip(inst.gamma()).chain(b.sigma2().iter().zip(inst.sigma2())) {
                prop_assert!((x / y - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn binary_format_round_trips_exactly((cfg, idx) in arb_config()) {
        let inst = sample_instance(&cfg, idx).unwrap();
        let other = sample_instance(&cfg, idx + 1).unwrap();
        let mut buf = Vec::new();
        dataset::write_binary(&mut buf, &[inst.clone(), other.clone()]).unwrap();
        let back = dataset::read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back, vec![inst, other]);
    }
}

#[test]
fn malformed_records_are_rejected() {
    assert!(dataset::read_text("{\"n\": 2}\n".as_bytes()).is_err());
    assert!(dataset::read_text("not json\n".as_bytes()).is_err());
    let inst = sample_instance(&ScenarioConfig::default(), 0).unwrap();
    let mut buf = Vec::new();
    dataset::write_binary(&mut buf, &[inst]).unwrap();
    buf.truncate(buf.len() - 3);
    assert!(dataset::read_binary(buf.as_slice()).is_err());
    assert!(dataset::read_text("\n\n".as_bytes()).unwrap().is_empty());
}
