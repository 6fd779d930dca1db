use super::tape::{Tape, Tensor};
use crate::error::Result;
use crate::matrix::Matrix;

/// Compare reverse-mode gradients of a scalar graph against fourth-order
/// central differences at `point`, with per-coordinate step
/// `step · (1 + |x|)`.
///
/// Returns `max |autodiff − fd| / (|fd| + 1e-12)` over every coordinate of
/// every input. A builder failure is reported as an infinite error.
pub fn grad_check<F>(build: F, point: &[Matrix], step: f64) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    let eval = |inputs: &[Matrix]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        Ok(build(&tape, &vars)?.item())
    };
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<_> = point.iter().map(|m| tape.param(m.clone())).collect();
        let grads = build(&tape, &vars).and_then(|root| tape.backward(root));
        match grads {
            Ok(g) => vars.iter().map(|v| g.get(*v)).collect::<Vec<_>>(),
            Err(_) => return f64::INFINITY,
        }
    };
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for (i, m) in point.iter().enumerate() {
        for j in 0..m.len() {
            let x = m.data()[j];
            let h = step * (1.0 + x.abs());
            let mut at = |dx: f64| {
                probe[i].data_mut()[j] = x + dx;
                eval(&probe)
            };
            let samples = [at(2.0 * h), at(h), at(-h), at(-2.0 * h)];
            probe[i].data_mut()[j] = x;
            let [Ok(p2), Ok(p1), Ok(m1), Ok(m2)] = samples else {
                return f64::INFINITY;
            };
            let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let ad = analytic[i].data()[j];
            worst = worst.max((ad - fd).abs() / (fd.abs() + 1e-12));
        }
    }
    worst
}
