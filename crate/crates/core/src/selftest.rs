//! Executable property suite: gradient checks, permutation symmetries,
//! the two construction paths, the constraint-layer fixed point and CCP
//! sanity. Each check draws its own random cases from a seed and reports
//! the worst observed error against its tolerance.

use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Tape, Tensor, LAYER_NORM_EPS};
use crate::baselines::ccp::{ccp_solve, CcpConfig};
use crate::baselines::zf::zf_init;
use crate::cplx::{CMatrix, CTensor};
use crate::decoder::{self, DecoderConfig, SolvePath};
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::Result;
use crate::eval::FEASIBLE_CV;
use crate::matrix::Matrix;
use crate::qos::{self, Beamformer, InstanceTensors};
use crate::scenario::{sample_instance, ChannelInstance, ScenarioConfig};

/// Outcome of one property check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst error, counts and runtime, for the log line.
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String, start: Instant) -> Self {
        Self {
            name,
            passed,
            detail: format!("{detail} ({:.1} s)", start.elapsed().as_secs_f64()),
        }
    }
}

/// `max |a − b| / max |b|`, with a floor on the denominator.
pub fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    let scale = b.re.max_abs().max(b.im.max_abs()).max(1e-300);
    let d = a.re.zip_map(&b.re, |x, y| x - y).max_abs().max(a.im.zip_map(&b.im, |x, y| x - y).max_abs());
    d / scale
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_cmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn project<'t>(t: Tensor<'t>, weights: &Matrix) -> Result<Tensor<'t>> {
    t.mul(t.tape().constant(weights.clone()))?.sum()
}

/// Model-unit instance with the given group sizes.
pub fn instance(n: usize, sizes: &[usize], gamma_db: f64, seed: u64, idx: u64) -> Result<ChannelInstance> {
    let mut cfg = ScenarioConfig::uniform(n, sizes.len(), 1, gamma_db);
    cfg.group_sizes = sizes.to_vec();
    cfg.seed = seed;
    Ok(sample_instance(&cfg, idx)?.to_model_units())
}

/// Random group order and per-group user orders for `sizes`.
pub fn random_permutation(rng: &mut ChaCha8Rng, sizes: &[usize]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(rng);
    let users = sizes
        .iter()
        .map(|&k| {
            let mut o: Vec<usize> = (0..k).collect();
            o.shuffle(rng);
            o
        })
        .collect();
    (order, users)
}

fn permute_rows(a: &CMatrix, cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(cols.len(), a.cols(), |r, c| a.get(cols[r], c))
}

fn permute_cols(a: &CMatrix, cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(a.rows(), cols.len(), |r, c| a.get(r, cols[c]))
}

/// One smooth operation of a random composed graph on `3 x 3` values.
fn random_op<'t>(rng: &mut ChaCha8Rng, pool: &[Tensor<'t>], gain: Tensor<'t>, bias: Tensor<'t>) -> Result<Tensor<'t>> {
    let a = pool[rng.random_range(0..pool.len())];
    let b = pool[rng.random_range(0..pool.len())];
    match rng.random_range(0..11) {
        0 => a.add(b),
        1 => a.sub(b),
        2 => a.mul(b),
        3 => a.matmul(b)?.scale(1.0 / 3.0),
        4 => a.matmul_tn(b)?.scale(1.0 / 3.0),
        5 => a.t(),
        6 => a.scale(0.5)?.exp(),
        7 => a.square()?.add(a.tape().constant(Matrix::filled(3, 3, 1.0)))?.sqrt(),
        8 => a.softmax_cols(),
        9 => a.layer_norm_cols(gain, bias, LAYER_NORM_EPS),
        _ => {
            let base = Matrix::from_fn(3, 3, |i, j| if i == j { 3.0 } else { 0.0 });
            a.tape().constant(base).add(a.scale(0.3)?)?.solve(b)
        }
    }
}

/// Near-optimal step of the fourth-order stencil in double precision.
const FD_STEP: f64 = 1e-3;

/// Every primitive and `graphs` random composed graphs against central
/// differences, relative error at most `1e-6`.
pub fn autodiff_fd(graphs: usize, seed: u64) -> Check {
    let start = Instant::now();
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failed: Vec<String> = Vec::new();
    let mut record = |name: String, err: f64| {
        worst = worst.max(err);
        if !(err <= TOL) {
            failed.push(format!("{name}: {err:.2e}"));
        }
    };

    let w34 = rand_mat(&mut rng, 3, 4);
    let m = |rng: &mut ChaCha8Rng| rand_mat(rng, 3, 4);
    let positive = |rng: &mut ChaCha8Rng| Matrix::from_fn(3, 4, |_, _| rng.random_range(0.5..2.0));
    let off_kink = |rng: &mut ChaCha8Rng| {
        Matrix::from_fn(3, 4, |_, _| {
            let x: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                x
            } else {
                -x
            }
        })
    };
    type Prim = (&'static str, Box<dyn for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>>, Vec<Matrix>);
    let (wa, wb, wc, wd, we) = (w34, rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 4, 5));
    let prims: Vec<Prim> = vec![
        ("add", Box::new({ let w = wa.clone(); move |_, v| project(v[0].add(v[1])?, &w) }), vec![m(&mut rng), m(&mut rng)]),
        ("sub", Box::new({ let w = wa.clone(); move |_, v| project(v[0].sub(v[1])?, &w) }), vec![m(&mut rng), m(&mut rng)]),
        ("mul", Box::new({ let w = wa.clone(); move |_, v| project(v[0].mul(v[1])?, &w) }), vec![m(&mut rng), m(&mut rng)]),
        ("div", Box::new({ let w = wa.clone(); move |_, v| project(v[0].div(v[1])?, &w) }), vec![m(&mut rng), positive(&mut rng)]),
        ("scale", Box::new({ let w = wa.clone(); move |_, v| project(v[0].scale(-2.5)?, &w) }), vec![m(&mut rng)]),
        ("neg", Box::new({ let w = wa.clone(); move |_, v| project(v[0].neg()?, &w) }), vec![m(&mut rng)]),
        ("add_col", Box::new({ let w = wa.clone(); move |_, v| project(v[0].add_col(v[1])?, &w) }), vec![m(&mut rng), rand_mat(&mut rng, 3, 1)]),
        ("matmul", Box::new({ let w = wb.clone(); move |_, v| project(v[0].matmul(v[1])?, &w) }), vec![m(&mut rng), rand_mat(&mut rng, 4, 2)]),
        ("matmul_tn", Box::new({ let w = rand_mat(&mut rng, 4, 2); move |_, v| project(v[0].matmul_tn(v[1])?, &w) }), vec![m(&mut rng), rand_mat(&mut rng, 3, 2)]),
        ("matmul_nt", Box::new({ let w = wb.clone(); move |_, v| project(v[0].matmul_nt(v[1])?, &w) }), vec![m(&mut rng), rand_mat(&mut rng, 2, 4)]),
        ("transpose", Box::new({ let w = wc.clone(); move |_, v| project(v[0].t()?, &w) }), vec![m(&mut rng)]),
        ("slice_cols", Box::new({ let w = rand_mat(&mut rng, 3, 2); move |_, v| project(v[0].slice_cols(1, 2)?, &w) }), vec![m(&mut rng)]),
        ("slice_rows", Box::new({ let w = rand_mat(&mut rng, 2, 4); move |_, v| project(v[0].slice_rows(1, 2)?, &w) }), vec![m(&mut rng)]),
        ("concat_cols", Box::new({ let w = rand_mat(&mut rng, 3, 6); move |t, v| project(t.concat_cols(&[v[0], v[1]])?, &w) }), vec![m(&mut rng), rand_mat(&mut rng, 3, 2)]),
        ("concat_rows", Box::new({ let w = rand_mat(&mut rng, 5, 4); move |t, v| project(t.concat_rows(&[v[0], v[1]])?, &w) }), vec![m(&mut rng), rand_mat(&mut rng, 2, 4)]),
        ("sum_axis", Box::new({ let w = rand_mat(&mut rng, 1, 4); move |_, v| project(v[0].sum_axis(0)?, &w) }), vec![m(&mut rng)]),
        ("mean_axis", Box::new({ let w = rand_mat(&mut rng, 3, 1); move |_, v| project(v[0].mean_axis(1)?, &w) }), vec![m(&mut rng)]),
        ("sum", Box::new(|_, v| v[0].sum()?.square()), vec![m(&mut rng)]),
        ("relu", Box::new({ let w = wa.clone(); move |_, v| project(v[0].relu()?, &w) }), vec![off_kink(&mut rng)]),
        ("exp", Box::new({ let w = wa.clone(); move |_, v| project(v[0].exp()?, &w) }), vec![m(&mut rng)]),
        ("sqrt", Box::new({ let w = wa.clone(); move |_, v| project(v[0].sqrt()?, &w) }), vec![positive(&mut rng)]),
        ("square", Box::new({ let w = wa.clone(); move |_, v| project(v[0].square()?, &w) }), vec![m(&mut rng)]),
        ("softmax_cols", Box::new({ let w = wa.clone(); move |_, v| project(v[0].softmax_cols()?, &w) }), vec![m(&mut rng)]),
        (
            "layer_norm_cols",
            Box::new({ let w = rand_mat(&mut rng, 6, 3); move |_, v| project(v[0].layer_norm_cols(v[1], v[2], LAYER_NORM_EPS)?, &w) }),
            vec![rand_mat(&mut rng, 6, 3), rand_mat(&mut rng, 6, 1), rand_mat(&mut rng, 6, 1)],
        ),
        (
            "solve",
            Box::new({ let w = wd.clone(); move |_, v| project(v[0].solve(v[1])?.slice_rows(0, 2)?, &w) }),
            vec![Matrix::from_fn(4, 4, |i, j| rng.random_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 }), rand_mat(&mut rng, 4, 2)],
        ),
        (
            "attention",
            Box::new({
                let w = we.clone();
                move |t, v| {
                    let segs: Rc<[std::ops::Range<usize>]> = vec![0..2, 2..5].into();
                    project(t.attention(v[0], v[1], v[2], 2, segs)?, &w)
                }
            }),
            vec![rand_mat(&mut rng, 4, 5), rand_mat(&mut rng, 4, 5), rand_mat(&mut rng, 4, 5)],
        ),
    ];
    let primitives = prims.len();
    for (name, build, point) in prims {
        record(name.to_string(), grad_check(|t, v| build(t, v), &point, FD_STEP));
    }

    for g in 0..graphs {
        let graph_seed = rng.random::<u64>();
        let inputs: Vec<Matrix> = (0..3).map(|_| rand_mat(&mut rng, 3, 3)).collect();
        let weights = rand_mat(&mut rng, 3, 3);
        let err = grad_check(
            |tape, v| {
                let mut ops = ChaCha8Rng::seed_from_u64(graph_seed);
                let gain = tape.constant(Matrix::filled(3, 1, 1.3));
                let bias = tape.constant(Matrix::filled(3, 1, -0.2));
                let mut pool: Vec<Tensor<'_>> = v.to_vec();
                for _ in 0..6 {
                    let next = random_op(&mut ops, &pool, gain, bias)?;
                    pool.push(next);
                }
                let last = *pool.last().expect("nonempty pool");
                project(last, &weights)
            },
            &inputs,
            FD_STEP,
        );
        record(format!("graph {g}"), err);
    }
    let passed = failed.is_empty();
    let mut detail = format!("{primitives} primitives + {graphs} graphs, worst {worst:.2e} (tol {TOL:.0e})");
    if !passed {
        detail.push_str(&format!("; failures: {}", failed.join(", ")));
    }
    Check::new("autodiff finite differences", passed, detail, start)
}

/// Random encoder parameters, instances and permutations at `N = 8`,
/// `M = 3`, `K_m ∈ {1..4}`: the encoder output follows the permutation.
pub fn encoder_hpe(draws: usize, seed: u64) -> Check {
    let start = Instant::now();
    const TOL: f64 = 1e-9;
    let run = || -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EncoderConfig { n: 8, d: 32, layers: 2, heads: 4, d_ff: 64 };
        let mut worst = 0.0f64;
        for i in 0..draws {
            let params = EncoderParams::init(&cfg, rng.random())?;
            let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(1..=4)).collect();
            let inst = instance(8, &sizes, 10.0, seed, i as u64)?;
            let (order, users) = random_permutation(&mut rng, &sizes);
            let perm = inst.permuted(&order, &users)?;
            let cols = inst.column_permutation(&order, &users)?;
            let (alpha, lambda) = encoder::encode(&params, cfg.heads, &inst)?;
            let (pa, pl) = encoder::encode(&params, cfg.heads, &perm)?;
            worst = worst.max(rel_diff(&pa, &permute_rows(&alpha, &cols)));
            let lam = CMatrix::from_fn(lambda.len(), 1, |r, _| (lambda[cols[r]], 0.0));
            let plam = CMatrix::from_fn(pl.len(), 1, |r, _| (pl[r], 0.0));
            if lam.norm_sqr() > 0.0 {
                worst = worst.max(rel_diff(&plam, &lam));
            }
        }
        Ok(worst)
    };
    verdict("encoder permutation equivariance", run(), TOL, draws, start)
}

fn verdict(name: &'static str, worst: Result<f64>, tol: f64, draws: usize, start: Instant) -> Check {
    match worst {
        Ok(w) => Check::new(name, w <= tol, format!("{draws} draws, worst {w:.2e} (tol {tol:.0e})"), start),
        Err(e) => Check::new(name, false, format!("error: {e}"), start),
    }
}

/// Decoding with `R = 5` constraint layers: permuting users inside a group
/// leaves the beamformer unchanged, permuting groups permutes its columns.
pub fn decoder_hpe(draws: usize, seed: u64) -> Check {
    let start = Instant::now();
    const TOL: f64 = 1e-9;
    let run = || -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = DecoderConfig::default();
        let mut worst = 0.0f64;
        for i in 0..draws {
            let m = rng.random_range(1..=4);
            let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..=3)).collect();
            let inst = instance(8, &sizes, rng.random_range(5.0..15.0), seed, i as u64)?;
            let k = inst.users();
            let alpha = rand_cmat(&mut rng, k, 1).scale(3.0);
            let lambda: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
            let (order, users) = random_permutation(&mut rng, &sizes);
            let perm = inst.permuted(&order, &users)?;
            let cols = inst.column_permutation(&order, &users)?;
            let w = decoder::decode(&inst, &alpha, &lambda, &cfg, 5)?;
            let pw = decoder::decode(
                &perm,
                &permute_rows(&alpha, &cols),
                &cols.iter().map(|&c| lambda[c]).collect::<Vec<_>>(),
                &cfg,
                5,
            )?;
            worst = worst.max(rel_diff(&pw.w, &permute_cols(&w.w, &order)));
        }
        Ok(worst)
    };
    verdict("decoder permutation equivariance", run(), TOL, draws, start)
}

/// A self-attention sublayer over one segment commutes with any column
/// permutation.
pub fn attention_pe(draws: usize, seed: u64) -> Check {
    let start = Instant::now();
    const TOL: f64 = 1e-9;
    let run = || -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..draws {
            let (d, heads) = [(8, 2), (16, 4), (12, 3)][rng.random_range(0..3)];
            let c = rng.random_range(2..=10);
            let s = encoder::init_sublayer(&mut rng, d, 2 * d);
            let x = rand_mat(&mut rng, d, c).scale(2.0);
            let mut order: Vec<usize> = (0..c).collect();
            order.shuffle(&mut rng);
            let px = Matrix::from_fn(d, c, |r, j| x.get(r, order[j]));
            let run_one = |input: &Matrix| -> Result<Matrix> {
                let tape = Tape::new();
                let sp = s.map(&mut |m: &Matrix| tape.constant(m.clone()));
                let seg: Rc<[std::ops::Range<usize>]> = vec![0..c].into();
                Ok(encoder::self_attention(&sp, heads, tape.constant(input.clone()), seg)?.value().as_ref().clone())
            };
            let y = run_one(&x)?;
            let py = run_one(&px)?;
            let expect = Matrix::from_fn(d, c, |r, j| y.get(r, order[j]));
            let diff = py.zip_map(&expect, |a, b| a - b).max_abs() / expect.max_abs().max(1e-300);
            worst = worst.max(diff);
        }
        Ok(worst)
    };
    verdict("self-attention permutation equivariance", run(), TOL, draws, start)
}

/// Direct and Woodbury construction agree on random instances with
/// `N ≤ 16` and `K ≤ 12`.
pub fn woodbury_agreement(draws: usize, seed: u64) -> Check {
    let start = Instant::now();
    const TOL: f64 = 1e-8;
    let run = || -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for i in 0..draws {
            let n = rng.random_range(1..=16);
            let m = rng.random_range(1..=4);
            let mut sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..=3)).collect();
            while sizes.iter().sum::<usize>() > 12 {
                sizes.pop();
            }
            let inst = instance(n, &sizes, rng.random_range(0.0..15.0), seed, i as u64)?;
            let k = inst.users();
            let alpha = rand_cmat(&mut rng, k, 1);
            let lambda: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..3.0)).collect();
            let direct = decoder::construct(&inst, &alpha, &lambda, SolvePath::Direct)?;
            let wood = decoder::construct(&inst, &alpha, &lambda, SolvePath::Woodbury)?;
            worst = worst.max(rel_diff(&wood.w, &direct.w));
        }
        Ok(worst)
    };
    verdict("direct vs Woodbury construction", run(), TOL, draws, start)
}

/// Central-difference gradient of `V` over `Re W` and `Im W`.
pub fn fd_violation_gradient(inst: &ChannelInstance, w: &Beamformer, h: f64) -> Result<CMatrix> {
    let (n, m) = w.w.shape();
    let mut out = CMatrix::zeros(n, m);
    for r in 0..n {
        for c in 0..m {
            let (a, b) = w.w.get(r, c);
            let mut part = [0.0; 2];
            for (i, p) in part.iter_mut().enumerate() {
                let (mut plus, mut minus) = (w.clone(), w.clone());
                if i == 0 {
                    plus.w.set(r, c, (a + h, b));
                    minus.w.set(r, c, (a - h, b));
                } else {
                    plus.w.set(r, c, (a, b + h));
                    minus.w.set(r, c, (a, b - h));
                }
                *p = (qos::violation_total(inst, &plus)? - qos::violation_total(inst, &minus)?) / (2.0 * h);
            }
            out.set(r, c, (part[0], part[1]));
        }
    }
    Ok(out)
}

/// Analytic `∇V` against finite differences away from the ReLU kinks,
/// and exactly zero wherever every constraint holds strictly.
pub fn violation_gradient(draws: usize, seed: u64) -> Check {
    let start = Instant::now();
    const TOL: f64 = 1e-5;
    let run = || -> Result<(f64, usize, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut checked = 0;
        for i in 0..draws {
            let m = rng.random_range(1..=3);
            let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..=3)).collect();
            let inst = instance(6, &sizes, 10.0, seed, i as u64)?;
            let w = Beamformer::new(rand_cmat(&mut rng, 6, m).scale(4.0));
            let sinr = qos::sinr(&inst, &w)?;
            let margin = sinr
                .iter()
                .zip(inst.user_gamma())
                .map(|(s, g)| ((g - s) / g).abs())
                .fold(f64::INFINITY, f64::min);
            if margin <= 1e-3 {
                continue;
            }
            let analytic = qos::grad_violation(&inst, &w)?;
            let numeric = fd_violation_gradient(&inst, &w, 1e-6)?;
            if numeric.norm_sqr() > 0.0 {
                worst = worst.max(rel_diff(&analytic, &numeric));
            } else if analytic.norm_sqr() > 0.0 {
                worst = f64::INFINITY;
            }
            checked += 1;
        }
        // strictly feasible points: zero-forcing scaled up
        let mut zero_ok = true;
        for i in 0..draws.min(50) {
            let inst = instance(8, &[2, 1, 2], 10.0, seed ^ 1, i as u64)?;
            let zf = zf_init(&inst)?;
            let w = Beamformer::new(zf.w.w.scale(1.5));
            zero_ok &= qos::grad_violation(&inst, &w)?.norm_sqr() == 0.0;
        }
        Ok((worst, checked, zero_ok))
    };
    match run() {
        Ok((w, checked, zero_ok)) => Check::new(
            "violation gradient",
            w <= TOL && zero_ok && checked * 2 >= draws,
            format!("{checked}/{draws} draws off the kinks, worst {w:.2e} (tol {TOL:.0e}), zero at feasible points: {zero_ok}"),
            start,
        ),
        Err(e) => Check::new("violation gradient", false, format!("error: {e}"), start),
    }
}

/// A strictly feasible beamformer passes `R` constraint layers bit for bit.
pub fn fixed_point(draws: usize, seed: u64) -> Check {
    let start = Instant::now();
    let run = || -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut unchanged = 0;
        for i in 0..draws {
            let m = rng.random_range(1..=3);
            let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..=2)).collect();
            let inst = instance(8, &sizes, rng.random_range(5.0..15.0), seed, i as u64)?;
            let zf = zf_init(&inst)?;
            let w = zf.w.w.scale(rng.random_range(1.1..3.0));
            let tape = Tape::new();
            let it = InstanceTensors::new(&tape, &inst);
            let mut x = CTensor::constant(&tape, &w);
            for _ in 0..5 {
                x = decoder::constraint_step(&it, x, decoder::DEFAULT_ETA)?;
            }
            if x.value() == w {
                unchanged += 1;
            }
        }
        Ok(unchanged)
    };
    match run() {
        Ok(u) => Check::new("feasible fixed point", u == draws, format!("{u}/{draws} draws unchanged after 5 layers"), start),
        Err(e) => Check::new("feasible fixed point", false, format!("error: {e}"), start),
    }
}

/// CCP reaches the matched-filter optimum for one user, and with four
/// users returns a feasible point no more expensive than its start.
pub fn ccp_sanity(single: usize, multi: usize, seed: u64) -> Check {
    let start = Instant::now();
    let run = || -> Result<(f64, usize)> {
        let cfg = CcpConfig::default();
        let mut worst = 0.0f64;
        for i in 0..single {
            let inst = instance(8, &[1], 10.0, seed, i as u64)?;
            let out = ccp_solve(&inst, &zf_init(&inst)?.w, &cfg)?;
            let (_, p_opt) = qos::mrt_oracle(&inst)?;
            worst = worst.max((qos::total_power(&out.w) / p_opt - 1.0).abs());
        }
        let mut good = 0;
        for i in 0..multi {
            let inst = instance(8, &[4], 10.0, seed ^ 2, i as u64)?;
            let zf = zf_init(&inst)?;
            let out = ccp_solve(&inst, &zf.w, &cfg)?;
            if qos::cv(&inst, &out.w)? <= FEASIBLE_CV && qos::total_power(&out.w) <= qos::total_power(&zf.w) {
                good += 1;
            }
        }
        Ok((worst, good))
    };
    match run() {
        Ok((worst, good)) => Check::new(
            "CCP sanity",
            worst <= 1e-4 && good * 100 >= 95 * multi,
            format!("single user worst gap {worst:.2e} (tol 1e-4); {good}/{multi} multi-user runs feasible and no worse than start"),
            start,
        ),
        Err(e) => Check::new("CCP sanity", false, format!("error: {e}"), start),
    }
}

/// The whole suite with the draw counts used for acceptance.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        autodiff_fd(50, seed),
        encoder_hpe(100, seed + 1),
        decoder_hpe(100, seed + 2),
        attention_pe(100, seed + 3),
        woodbury_agreement(1000, seed + 4),
        violation_gradient(200, seed + 5),
        fixed_point(100, seed + 6),
        ccp_sanity(100, 200, seed + 7),
    ]
}
