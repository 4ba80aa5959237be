use ndarray::Array2;

use crate::encoder::Packing;
use crate::numerics::{CustomOp, NumericsError, Scalar, Tensor};

use super::dp;

/// Differentiable forward marginal over a packed lattice.
///
/// The single input is an `M x k` block whose rows are the start positions
/// of every sequence laid out by `layout`; column `l - 1` holds the log
/// probability of the length-`l` segment. Cells with `l > n - i` are never
/// read. The output is an `S x 1` column of `alpha_n`, one per sequence.
///
/// The gradient of `alpha_n` with respect to an entry is the posterior
/// probability that the segment is used, found by forward-backward.
#[derive(Debug, Clone)]
pub struct ForwardMarginal {
    layout: Packing,
    k: usize,
}

impl ForwardMarginal {
    pub fn new(layout: Packing, k: usize) -> Self {
        ForwardMarginal { layout, k }
    }

    fn check<F: Scalar>(&self, x: &Tensor<F>) -> Result<(), NumericsError> {
        let want = (self.layout.total(), self.k);
        if x.dim() != want {
            return Err(NumericsError::ShapeMismatch {
                op: "forward_marginal",
                left: x.dim(),
                right: want,
            });
        }
        Ok(())
    }
}

impl<F: Scalar> CustomOp<F> for ForwardMarginal {
    fn name(&self) -> &'static str {
        "forward_marginal"
    }

    fn forward(&self, inputs: &[&Tensor<F>]) -> Result<Tensor<F>, NumericsError> {
        let x = inputs[0];
        self.check(x)?;
        let mut out = Array2::zeros((self.layout.lens.len(), 1));
        for (s, (&off, &n)) in self.layout.offsets.iter().zip(&self.layout.lens).enumerate() {
            let alpha = dp::forward_alphas(n, self.k, |i, l| x[[off + i, l - 1]]);
            out[[s, 0]] = alpha[n];
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<F>], output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let x = inputs[0];
        let mut gx = Array2::zeros(x.dim());
        for (s, (&off, &n)) in self.layout.offsets.iter().zip(&self.layout.lens).enumerate() {
            let total = output[[s, 0]];
            let g = grad[[s, 0]];
            if !total.is_finite() || g == F::zero() {
                continue;
            }
            let entry = |i: usize, l: usize| x[[off + i, l - 1]];
            let alpha = dp::forward_alphas(n, self.k, entry);
            let beta = dp::backward_betas(n, self.k, entry);
            for i in 0..n {
                for l in 1..=self.k.min(n - i) {
                    let post = (alpha[i] + entry(i, l) + beta[i + l] - total).exp();
                    gx[[off + i, l - 1]] = g * post;
                }
            }
        }
        vec![Some(gx)]
    }
}
