use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Model;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn for_model(model: &Model) -> Self {
        let mut shapes = Vec::new();
        model.visit(&mut |_, m| shapes.push(m.shape()));
        Self::new(&shapes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to `params[i]` using `grads[i]`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidConfig(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: self.m[i].shape(),
                    rhs: if p.shape() != self.m[i].shape() { p.shape() } else { g.shape() },
                });
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            for (j, &gj) in g.data().iter().enumerate() {
                let mj = &mut m.data_mut()[j];
                *mj = b1 * *mj + (1.0 - b1) * gj;
                let mhat = *mj / c1;
                let vj = &mut v.data_mut()[j];
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                let vhat = *vj / c2;
                pd[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut Model, grads: &[Matrix], lr: f64) -> Result<()> {
        let mut params: Vec<Matrix> = Vec::with_capacity(grads.len());
        model.visit_mut(&mut |_, m| params.push(std::mem::replace(m, Matrix::zeros(0, 0))));
        let result = {
            let mut refs: Vec<&mut Matrix> = params.iter_mut().collect();
            self.step(&mut refs, grads, lr)
        };
        let mut it = params.into_iter();
        model.visit_mut(&mut |_, m| *m = it.next().expect("parameter count is fixed"));
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let g = Matrix::from_vec(1, 3, vec![0.3, -4.0, 1e-3]).unwrap();
        let mut adam = Adam::new(&[(1, 3)]);
        let before = p.clone();
        adam.step(&mut [&mut p], &[g.clone()], 0.01).unwrap();
        for j in 0..3 {
            let delta = before.data()[j] - p.data()[j];
            assert!((delta.abs() - 0.01).abs() < 1e-6, "delta {delta}");
            assert_eq!(delta.signum(), g.data()[j].signum());
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let mut adam = Adam::new(&[(2, 1)]);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Matrix::zeros(2, 1)], 0.1).unwrap();
        }
        assert_eq!(p.data(), &[1.0, 2.0]);
    }

    #[test]
    fn quadratic_loss_decreases() {
        // f(x) = Σ c_j (x_j − t_j)²
        let c = [1.0, 10.0, 0.1];
        let t = [3.0, -1.0, 2.0];
        let f = |x: &Matrix| -> f64 { (0..3).map(|j| c[j] * (x.data()[j] - t[j]).powi(2)).sum() };
        let mut x = Matrix::zeros(3, 1);
        let mut adam = Adam::new(&[(3, 1)]);
        let mut losses = vec![f(&x)];
        for _ in 0..100 {
            let g = Matrix::from_fn(3, 1, |j, _| 2.0 * c[j] * (x.data()[j] - t[j]));
            adam.step(&mut [&mut x], &[g], 0.05).unwrap();
            losses.push(f(&x));
        }
        for w in losses[..30].windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(losses[100] < 0.05 * losses[0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let mut adam = Adam::new(&[(2, 2)]);
        assert!(adam.step(&mut [&mut p], &[Matrix::zeros(2, 1)], 0.1).is_err());
        assert!(adam.step(&mut [], &[], 0.1).is_err());
    }
}
