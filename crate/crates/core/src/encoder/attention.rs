use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::numerics::{CustomOp, NumericsError, Scalar, Tensor};

use super::Packing;

/// Multi-head scaled dot-product attention over packed sequences, each with
/// its own additive mask. Inputs are `[queries, keys, values]`, all `R x d`.
#[derive(Debug)]
pub struct MaskedAttention<F: Scalar> {
    packing: Packing,
    heads: usize,
    masks: Vec<Arc<Array2<F>>>,
}

impl<F: Scalar> MaskedAttention<F> {
    pub fn new(packing: Packing, heads: usize, masks: Vec<Arc<Array2<F>>>) -> Result<Self, NumericsError> {
        if masks.len() != packing.lens.len() {
            return Err(NumericsError::Invalid(format!(
                "{} masks for {} sequences",
                masks.len(),
                packing.lens.len()
            )));
        }
        for (m, &n) in masks.iter().zip(&packing.lens) {
            if m.dim() != (n, n) {
                return Err(NumericsError::ShapeMismatch {
                    op: "masked_attention",
                    left: (n, n),
                    right: m.dim(),
                });
            }
        }
        Ok(MaskedAttention { packing, heads, masks })
    }

    fn probabilities(&self, q: ArrayView2<F>, k: ArrayView2<F>, mask: &Array2<F>, scale: F) -> Array2<F> {
        let mut p = q.dot(&k.t()) * scale + mask;
        for mut row in p.rows_mut() {
            let max = row
                .iter()
                .fold(F::neg_infinity(), |m, &v| if v > m { v } else { m });
            let mut sum = F::zero();
            row.mapv_inplace(|v| {
                let e = (v - max).exp();
                sum += e;
                e
            });
            row.mapv_inplace(|v| v / sum);
        }
        p
    }

    fn head_width(&self, d: usize) -> Result<usize, NumericsError> {
        if self.heads == 0 || d % self.heads != 0 {
            return Err(NumericsError::Invalid(format!(
                "width {d} is not divisible by {} heads",
                self.heads
            )));
        }
        Ok(d / self.heads)
    }
}

impl<F: Scalar> CustomOp<F> for MaskedAttention<F> {
    fn name(&self) -> &'static str {
        "masked_attention"
    }

    fn forward(&self, inputs: &[&Tensor<F>]) -> Result<Tensor<F>, NumericsError> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        for t in [k, v] {
            if t.dim() != q.dim() {
                return Err(NumericsError::ShapeMismatch {
                    op: "masked_attention",
                    left: q.dim(),
                    right: t.dim(),
                });
            }
        }
        if q.nrows() != self.packing.total() {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_attention",
                left: q.dim(),
                right: (self.packing.total(), q.ncols()),
            });
        }
        let dh = self.head_width(q.ncols())?;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let mut out = Array2::zeros(q.dim());
        for (seq, (&off, &n)) in self.packing.offsets.iter().zip(&self.packing.lens).enumerate() {
            for h in 0..self.heads {
                let (rows, cols) = (off..off + n, h * dh..(h + 1) * dh);
                let qs = q.slice(s![rows.clone(), cols.clone()]);
                let ks = k.slice(s![rows.clone(), cols.clone()]);
                let vs = v.slice(s![rows.clone(), cols.clone()]);
                let p = self.probabilities(qs, ks, &self.masks[seq], scale);
                out.slice_mut(s![rows, cols]).assign(&p.dot(&vs));
            }
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<F>], _output: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let dh = q.ncols() / self.heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let mut gq = Array2::zeros(q.dim());
        let mut gk = Array2::zeros(q.dim());
        let mut gv = Array2::zeros(q.dim());
        for (seq, (&off, &n)) in self.packing.offsets.iter().zip(&self.packing.lens).enumerate() {
            for h in 0..self.heads {
                let (rows, cols) = (off..off + n, h * dh..(h + 1) * dh);
                let qs = q.slice(s![rows.clone(), cols.clone()]);
                let ks = k.slice(s![rows.clone(), cols.clone()]);
                let vs = v.slice(s![rows.clone(), cols.clone()]);
                let go = grad.slice(s![rows.clone(), cols.clone()]);
                let p = self.probabilities(qs, ks, &self.masks[seq], scale);
                let dp = go.dot(&vs.t());
                let mut ds = &dp * &p;
                let dots = ds.sum_axis(Axis(1));
                Zip::from(ds.rows_mut())
                    .and(p.rows())
                    .and(&dots)
                    .for_each(|mut d, pr, &dot| {
                        Zip::from(&mut d).and(&pr).for_each(|d, &pv| *d -= pv * dot);
                    });
                let mut gvs = gv.slice_mut(s![rows.clone(), cols.clone()]);
                gvs += &p.t().dot(&go);
                let mut gqs = gq.slice_mut(s![rows.clone(), cols.clone()]);
                gqs += &(ds.dot(&ks) * scale);
                let mut gks = gk.slice_mut(s![rows, cols]);
                gks += &(ds.t().dot(&qs) * scale);
            }
        }
        vec![Some(gq), Some(gk), Some(gv)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::mask::{build_directional_mask, build_segmental_mask};
    use crate::numerics::{grad_check_many, Graph, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Packing, Vec<Arc<Array2<f64>>>, Vec<Tensor<f64>>) {
        let packing = Packing::from_lens(&[4, 6]);
        let masks = vec![
            Arc::new(build_segmental_mask(4, 2).to_additive()),
            Arc::new(build_directional_mask(6).to_additive()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..3)
            .map(|_| Tensor::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0)))
            .collect();
        (packing, masks, inputs)
    }

    /// The same computation spelled out with graph primitives.
    fn composed(g: &mut Graph<f64>, v: &[Var], packing: &Packing, masks: &[Arc<Array2<f64>>], heads: usize) -> Var {
        let d = g.shape(v[0]).1;
        let dh = d / heads;
        let mut seqs = Vec::new();
        for (s, (&off, &n)) in packing.offsets.iter().zip(&packing.lens).enumerate() {
            let mut hs = Vec::new();
            for h in 0..heads {
                let cut = |g: &mut Graph<f64>, x: Var| {
                    let r = g.slice_rows(x, off, n).unwrap();
                    g.slice_cols(r, h * dh, dh).unwrap()
                };
                let (q, k, val) = (cut(g, v[0]), cut(g, v[1]), cut(g, v[2]));
                let kt = g.transpose(k).unwrap();
                let sc = g.matmul(q, kt).unwrap();
                let sc = g.scale(sc, 1.0 / (dh as f64).sqrt()).unwrap();
                let p = g.softmax(sc, Some(masks[s].clone())).unwrap();
                hs.push(g.matmul(p, val).unwrap());
            }
            seqs.push(g.concat_cols(&hs).unwrap());
        }
        g.concat_rows(&seqs).unwrap()
    }

    #[test]
    fn fused_matches_primitives() {
        let (packing, masks, inputs) = setup(3);
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let op = Arc::new(MaskedAttention::new(packing.clone(), 2, masks.clone()).unwrap());
        let fused = g.custom(op, &vars).unwrap();
        let reference = composed(&mut g, &vars, &packing, &masks, 2);
        let diff = (g.value(fused) - g.value(reference)).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn gradients_check_out() {
        for seed in 0..20 {
            let (packing, masks, inputs) = setup(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let w = Tensor::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0));
            let err = grad_check_many(
                |g, v| {
                    let op = Arc::new(MaskedAttention::new(packing.clone(), 2, masks.clone())?);
                    let y = g.custom(op, v)?;
                    let w = g.constant(w.clone());
                    let y = g.mul(y, w)?;
                    g.sum(y)
                },
                &inputs,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn mask_shape_is_validated() {
        let packing = Packing::from_lens(&[3]);
        let masks = vec![Arc::new(build_directional_mask(4).to_additive::<f64>())];
        assert!(MaskedAttention::new(packing, 1, masks).is_err());
    }
}
