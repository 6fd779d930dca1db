use hpe_core::autodiff::{grad_check, Tape};
use hpe_core::baselines::vanilla::VanillaConfig;
use hpe_core::decoder::{self, DecoderConfig};
use hpe_core::encoder::{self, EncoderConfig, EncoderParams};
use hpe_core::model::Model;
use hpe_core::qos::{self, InstanceTensors};
use hpe_core::selftest::{self, instance, rel_diff};
use hpe_core::train::loss_and_grad;
use hpe_core::{CMatrix, CTensor, ChannelInstance, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_encoder(n: usize) -> EncoderConfig {
    EncoderConfig { n, d: 8, layers: 1, heads: 2, d_ff: 16 }
}

#[test]
fn equal_sized_group_swap_swaps_encoder_blocks() {
    let cfg = EncoderConfig { n: 6, d: 16, layers: 2, heads: 4, d_ff: 32 };
    let params = EncoderParams::init(&cfg, 3).unwrap();
    let inst = instance(6, &[2, 2], 10.0, 1, 0).unwrap();
    let swapped = inst.permuted(&[1, 0], &[vec![0, 1], vec![0, 1]]).unwrap();
    let (a, _) = encoder::encode(&params, cfg.heads, &inst).unwrap();
    let (b, _) = encoder::encode(&params, cfg.heads, &swapped).unwrap();
    let expect = CMatrix::from_fn(4, 1, |r, _| a.get((r + 2) % 4, 0));
    assert!(rel_diff(&b, &expect) <= 1e-12);
}

#[test]
fn permutation_properties_hold_on_fresh_draws() {
    for check in [
        selftest::encoder_hpe(20, 91),
        selftest::decoder_hpe(20, 92),
        selftest::attention_pe(20, 93),
        selftest::woodbury_agreement(200, 94),
    ] {
        assert!(check.passed, "{}: {}", check.name, check.detail);
    }
}

/// Power plus penalty after construction and five constraint layers, as a
/// function of `(Re α, Im α, λ)`.
#[test]
fn decode_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for idx in 0..10 {
        let inst = instance(6, &[2, 1, 2], 10.0, 8, idx).unwrap();
        let k = inst.users();
        let point = vec![
            Matrix::from_fn(k, 1, |_, _| rng.random_range(-2.0..2.0)),
            Matrix::from_fn(k, 1, |_, _| rng.random_range(-2.0..2.0)),
            Matrix::from_fn(k, 1, |_, _| rng.random_range(0.1..1.5)),
        ];
        let cfg = DecoderConfig::default();
        let err = grad_check(
            |tape, v| {
                let it = InstanceTensors::new(tape, &inst);
                let w = decoder::decode_t(&it, CTensor::new(v[0], v[1])?, v[2], &cfg, 5)?;
                qos::power_t(w)?.add(qos::violation_t(&it, w)?.scale(0.5)?)
            },
            &point,
            1e-4,
        );
        assert!(err <= 1e-4, "instance {idx}: relative error {err:.2e}");
    }
}

fn perturbed_loss(model: &Model, insts: &[ChannelInstance], which: usize, entry: usize, delta: f64) -> f64 {
    let mut m = model.clone();
    let mut i = 0;
    m.visit_mut(&mut |_, p| {
        if i == which {
            p.data_mut()[entry] += delta;
        }
        i += 1;
    });
    hpe_core::train::evaluate_loss(&m, insts, 0.5).unwrap()
}

#[test]
fn tiny_model_loss_gradient_matches_finite_differences() {
    let model = Model::hpe(tiny_encoder(4), DecoderConfig::default(), 6).unwrap();
    let insts: Vec<_> = (0..2).map(|i| instance(4, &[2, 1], 10.0, 3, i).unwrap()).collect();
    let (_, grads) = loss_and_grad(&model, &insts, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scale = grads.iter().map(Matrix::max_abs).fold(0.0, f64::max);
    for _ in 0..40 {
        let which = rng.random_range(0..grads.len());
        let entry = rng.random_range(0..grads[which].len());
        let h = 1e-5;
        let fd = (perturbed_loss(&model, &insts, which, entry, h) - perturbed_loss(&model, &insts, which, entry, -h)) / (2.0 * h);
        let ad = grads[which].data()[entry];
        assert!((ad - fd).abs() <= 1e-4 * (fd.abs() + 1e-3 * scale), "param {which}[{entry}]: {ad} vs {fd}");
    }
}

fn vanilla_w(model: &Model, inst: &ChannelInstance) -> CMatrix {
    let tape = Tape::new();
    model.forward(&tape, &[inst], 0, false).unwrap().w[0].value()
}

#[test]
fn vanilla_is_group_equivariant_but_not_hierarchical() {
    let cfg = VanillaConfig { n: 6, d: 16, blocks: 2, heads: 4, d_ff: 32 };
    let model = Model::vanilla(cfg, DecoderConfig::default(), 2).unwrap();
    for idx in 0..10 {
        let inst = instance(6, &[2, 2, 1], 10.0, 4, idx).unwrap();
        let w = vanilla_w(&model, &inst);
        assert_eq!(w.shape(), (6, 3));

        let order = [2, 0, 1];
        let perm = inst.permuted(&order, &[vec![1, 0], vec![0, 1], vec![0]]).unwrap();
        let pw = vanilla_w(&model, &perm);
        let expect = CMatrix::from_fn(6, 3, |r, c| w.get(r, order[c]));
        assert!(rel_diff(&pw, &expect) <= 1e-9);

        // user 1 of group 0 and user 0 of group 1 trade places
        let mut h = inst.h().clone();
        for r in 0..6 {
            let (a, b) = (h.get(r, 1), h.get(r, 2));
            h.set(r, 1, b);
            h.set(r, 2, a);
        }
        let moved = ChannelInstance::new(h, vec![2, 2, 1], inst.sigma2().to_vec(), inst.gamma().to_vec()).unwrap();
        assert!(rel_diff(&vanilla_w(&model, &moved), &w) > 1e-6);
    }
}

#[test]
fn outputs_have_one_column_per_group_for_any_size() {
    let hpe = Model::hpe(tiny_encoder(4), DecoderConfig::default(), 1).unwrap();
    let flat = Model::vanilla(VanillaConfig { n: 4, d: 8, blocks: 1, heads: 2, d_ff: 16 }, DecoderConfig::default(), 1).unwrap();
    for sizes in [vec![1], vec![3, 1], vec![2, 2, 2, 2], vec![1, 5, 1]] {
        let inst = instance(4, &sizes, 10.0, 2, 0).unwrap();
        for model in [&hpe, &flat] {
            assert_eq!(model.run_model_units(&inst, 3).unwrap().w.shape(), (4, sizes.len()));
        }
    }
}
