use std::sync::Arc;

use ndarray::{s, Array2};
use rand::Rng;

use crate::numerics::{BoundParams, Dropout, Graph, NumericsError, ParamId, ParamStore, Scalar, Var};

use super::{
    build_directional_mask, build_segmental_mask, gate_and_add, linear, sinusoidal_positions, AttentionMask,
    EncoderConfig, EncoderVariant, MaskedAttention, OutputHead, Packing,
};

#[derive(Debug, Clone)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Transformer context encoder with a span (`Masked`) or causal
/// (`Directional`) attention mask.
///
/// The first layer draws queries, keys and values from the gated input
/// embeddings. Later layers take queries from the previous layer's output
/// but keep keys and values on the gated inputs, so a position never sees
/// what its own mask hides, however deep the stack.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    cfg: EncoderConfig,
    variant: EncoderVariant,
    max_seg_len: usize,
    gate: ParamId,
    layers: Vec<Layer>,
    head: OutputHead,
}

impl TransformerEncoder {
    pub fn new<F: Scalar, R: Rng>(
        cfg: &EncoderConfig,
        variant: EncoderVariant,
        max_seg_len: usize,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Self {
        assert!(variant != EncoderVariant::Recurrent);
        let d = cfg.d_model;
        let gate = store.glorot("encoder.gate", 2 * d, 1, rng);
        let layers = (0..cfg.layers)
            .map(|l| {
                let n = |s: &str| format!("encoder.layer{l}.{s}");
                Layer {
                    wq: store.glorot(n("wq"), d, d, rng),
                    bq: store.zeros(n("bq"), 1, d),
                    wk: store.glorot(n("wk"), d, d, rng),
                    bk: store.zeros(n("bk"), 1, d),
                    wv: store.glorot(n("wv"), d, d, rng),
                    bv: store.zeros(n("bv"), 1, d),
                    wo: store.glorot(n("wo"), d, d, rng),
                    bo: store.zeros(n("bo"), 1, d),
                    ln1_g: store.ones(n("ln1_g"), 1, d),
                    ln1_b: store.zeros(n("ln1_b"), 1, d),
                    ff1_w: store.glorot(n("ff1_w"), d, cfg.ff_size, rng),
                    ff1_b: store.zeros(n("ff1_b"), 1, cfg.ff_size),
                    ff2_w: store.glorot(n("ff2_w"), cfg.ff_size, d, rng),
                    ff2_b: store.zeros(n("ff2_b"), 1, d),
                    ln2_g: store.ones(n("ln2_g"), 1, d),
                    ln2_b: store.zeros(n("ln2_b"), 1, d),
                }
            })
            .collect();
        let head = OutputHead::new(store, "encoder", d, rng);
        TransformerEncoder {
            cfg: cfg.clone(),
            variant,
            max_seg_len,
            gate,
            layers,
            head,
        }
    }

    pub fn variant(&self) -> EncoderVariant {
        self.variant
    }

    /// The variant's mask for each packed (prefixed) sequence.
    pub fn masks_for(&self, packing: &Packing) -> Vec<AttentionMask> {
        packing
            .lens
            .iter()
            .map(|&n| match self.variant {
                EncoderVariant::Masked => build_segmental_mask(n, self.max_seg_len),
                _ => build_directional_mask(n),
            })
            .collect()
    }

    pub fn encode<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        inputs: Var,
        packing: &Packing,
        masks: &[AttentionMask],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var, NumericsError> {
        let d = self.cfg.d_model;
        if masks.len() != packing.lens.len() {
            return Err(NumericsError::Invalid(format!(
                "{} masks for {} sequences",
                masks.len(),
                packing.lens.len()
            )));
        }
        for (m, &n) in masks.iter().zip(&packing.lens) {
            if m.size() != n {
                return Err(NumericsError::ShapeMismatch {
                    op: "encode",
                    left: (n, n),
                    right: (m.size(), m.size()),
                });
            }
        }

        let longest = packing.lens.iter().copied().max().unwrap_or(0);
        let table = sinusoidal_positions(longest, d)?;
        let mut pos = Array2::<F>::zeros((packing.total(), d));
        for (&off, &n) in packing.offsets.iter().zip(&packing.lens) {
            pos.slice_mut(s![off..off + n, ..])
                .assign(&table.slice(s![..n, ..]).mapv(F::of));
        }
        let pos = g.constant(pos);
        let x = gate_and_add(g, inputs, pos, p.var(self.gate))?;
        let x = dropout.apply(g, x, self.cfg.dropout_in)?;

        let additive: Vec<Arc<Array2<F>>> = masks.iter().map(|m| Arc::new(m.to_additive())).collect();
        let mut query_src = x;
        for layer in &self.layers {
            let q = linear(g, query_src, p.var(layer.wq), p.var(layer.bq))?;
            let k = linear(g, x, p.var(layer.wk), p.var(layer.bk))?;
            let v = linear(g, x, p.var(layer.wv), p.var(layer.bv))?;
            let op = MaskedAttention::new(packing.clone(), self.cfg.heads, additive.clone())?;
            let att = g.custom(Arc::new(op), &[q, k, v])?;
            let o = linear(g, att, p.var(layer.wo), p.var(layer.bo))?;
            let o = dropout.apply(g, o, self.cfg.dropout_layer)?;
            let h = g.add(query_src, o)?;
            let h = g.layer_norm(h, p.var(layer.ln1_g), p.var(layer.ln1_b))?;

            let f = linear(g, h, p.var(layer.ff1_w), p.var(layer.ff1_b))?;
            let f = g.relu(f)?;
            let f = linear(g, f, p.var(layer.ff2_w), p.var(layer.ff2_b))?;
            let f = dropout.apply(g, f, self.cfg.dropout_layer)?;
            let h2 = g.add(h, f)?;
            query_src = g.layer_norm(h2, p.var(layer.ln2_g), p.var(layer.ln2_b))?;
        }
        self.head.apply(g, p, query_src)
    }
}
