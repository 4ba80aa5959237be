use crate::numerics::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F: Scalar> {
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Tensor::zeros(s), Tensor::zeros(s)))
            .unzip();
        Adam { t: 0, m, v }
    }

    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (F::of(ADAM_BETA1), F::of(ADAM_BETA2));
        let (one_b1, one_b2) = (F::of(1.0 - ADAM_BETA1), F::of(1.0 - ADAM_BETA2));
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let step = F::of(lr / c1);
        let c2 = F::of(c2);
        let eps = F::of(ADAM_EPS);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step * *m / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// L2 norm over every gradient tensor together.
pub fn global_norm<F: Scalar>(grads: &[Tensor<F>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = F::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * scale);
        }
    }
    norm
}
