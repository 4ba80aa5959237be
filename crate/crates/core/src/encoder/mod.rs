//! Context encoders. Every encoder reads a BOS-prefixed sequence and emits one
//! vector per prefixed position; the vector at prefixed position `t` is the
//! context for segments that start at original index `t`.

mod attention;
mod mask;
mod positional;
mod recurrent;
mod transformer;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::numerics::{BoundParams, Dropout, Graph, NumericsError, ParamStore, Scalar, Var};

pub use attention::MaskedAttention;
pub use mask::{build_directional_mask, build_segmental_mask, AttentionMask};
pub use positional::{gate_and_add, sinusoidal_positions};
pub use recurrent::{lstm_cell, lstm_cell_projected, LstmGates, LstmParams, RecurrentEncoder, LSTM_STATE_WIDTH};
pub use transformer::TransformerEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderVariant {
    /// Span-masked transformer.
    #[serde(rename = "mslm")]
    Masked,
    /// Causally masked transformer.
    #[serde(rename = "dmslm")]
    Directional,
    /// LSTM.
    #[serde(rename = "rslm")]
    Recurrent,
}

impl EncoderVariant {
    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::Masked => "mslm",
            EncoderVariant::Directional => "dmslm",
            EncoderVariant::Recurrent => "rslm",
        }
    }
}

impl std::str::FromStr for EncoderVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mslm" => Ok(EncoderVariant::Masked),
            "dmslm" => Ok(EncoderVariant::Directional),
            "rslm" => Ok(EncoderVariant::Recurrent),
            other => Err(format!("unknown variant {other:?} (expected mslm, dmslm or rslm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff_size: usize,
    pub layers: usize,
    pub dropout_in: f64,
    pub dropout_layer: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 256,
            heads: 4,
            ff_size: 509,
            layers: 1,
            dropout_in: 0.1,
            dropout_layer: 0.15,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, variant: EncoderVariant) -> Vec<String> {
        let mut errs = Vec::new();
        if self.d_model == 0 {
            errs.push("d_model: must be positive".to_string());
        }
        if variant != EncoderVariant::Recurrent {
            if self.heads == 0 || self.d_model % self.heads != 0 {
                errs.push(format!(
                    "heads: d_model {} is not divisible by {}",
                    self.d_model, self.heads
                ));
            }
            if self.d_model % 2 != 0 {
                errs.push("d_model: must be even for sinusoidal positions".to_string());
            }
            if self.layers == 0 {
                errs.push("layers: must be at least 1".to_string());
            }
        }
        for (name, p) in [("dropout_in", self.dropout_in), ("dropout_layer", self.dropout_layer)] {
            if !(0.0..1.0).contains(&p) {
                errs.push(format!("{name}: must lie in [0, 1), got {p}"));
            }
        }
        errs
    }
}

/// Row layout of several sequences stacked into one matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packing {
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl Packing {
    pub fn from_lens(lens: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lens.len());
        let mut at = 0;
        for &n in lens {
            offsets.push(at);
            at += n;
        }
        Packing {
            offsets,
            lens: lens.to_vec(),
        }
    }

    pub fn total(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.lens[self.lens.len() - 1])
    }

    pub fn row(&self, seq: usize, pos: usize) -> usize {
        self.offsets[seq] + pos
    }
}

/// Affine map followed by layer norm, applied to every encoder output.
#[derive(Debug, Clone)]
pub(crate) struct OutputHead {
    w: crate::numerics::ParamId,
    b: crate::numerics::ParamId,
    ln_g: crate::numerics::ParamId,
    ln_b: crate::numerics::ParamId,
}

impl OutputHead {
    pub(crate) fn new<F: Scalar, R: Rng>(store: &mut ParamStore<F>, prefix: &str, d: usize, rng: &mut R) -> Self {
        OutputHead {
            w: store.glorot(format!("{prefix}.out.w"), d, d, rng),
            b: store.zeros(format!("{prefix}.out.b"), 1, d),
            ln_g: store.ones(format!("{prefix}.out.ln_g"), 1, d),
            ln_b: store.zeros(format!("{prefix}.out.ln_b"), 1, d),
        }
    }

    pub(crate) fn apply<F: Scalar>(&self, g: &mut Graph<F>, p: &BoundParams, x: Var) -> Result<Var, NumericsError> {
        let y = linear(g, x, p.var(self.w), p.var(self.b))?;
        g.layer_norm(y, p.var(self.ln_g), p.var(self.ln_b))
    }
}

pub(crate) fn linear<F: Scalar>(g: &mut Graph<F>, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// One of the three context encoders.
#[derive(Debug, Clone)]
pub enum ContextEncoder {
    Transformer(TransformerEncoder),
    Recurrent(RecurrentEncoder),
}

impl ContextEncoder {
    /// Registers parameters under the `encoder.` prefix.
    pub fn new<F: Scalar, R: Rng>(
        cfg: &EncoderConfig,
        variant: EncoderVariant,
        max_seg_len: usize,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Self {
        match variant {
            EncoderVariant::Recurrent => ContextEncoder::Recurrent(RecurrentEncoder::new(cfg, store, rng)),
            v => ContextEncoder::Transformer(TransformerEncoder::new(cfg, v, max_seg_len, store, rng)),
        }
    }

    pub fn variant(&self) -> EncoderVariant {
        match self {
            ContextEncoder::Transformer(t) => t.variant(),
            ContextEncoder::Recurrent(_) => EncoderVariant::Recurrent,
        }
    }

    /// Encodes packed, BOS-prefixed embeddings (`R x d`) with the variant's
    /// own masks.
    pub fn encode<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        inputs: Var,
        packing: &Packing,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var, NumericsError> {
        match self {
            ContextEncoder::Transformer(t) => {
                let masks = t.masks_for(packing);
                t.encode(g, p, inputs, packing, &masks, dropout)
            }
            ContextEncoder::Recurrent(r) => r.encode(g, p, inputs, packing, dropout),
        }
    }
}

/// Trainable scalar count of an encoder built from `cfg`.
pub fn encoder_parameter_count(cfg: &EncoderConfig, variant: EncoderVariant, max_seg_len: usize) -> usize {
    let mut store = ParamStore::<f32>::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let _ = ContextEncoder::new(cfg, variant, max_seg_len, &mut store, &mut rng);
    store.count_prefix("encoder.")
}

#[cfg(test)]
mod tests;
