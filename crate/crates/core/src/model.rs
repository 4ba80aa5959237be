//! The full segmental language model: character embeddings, a context
//! encoder, and the segment decoder, tied together by the forward marginal.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BOS;
use crate::encoder::{ContextEncoder, EncoderConfig, EncoderVariant, Packing};
use crate::lattice::{viterbi, ForwardMarginal, LatticeError, LatticeLayout, SegmentDecoder, SegmentLattice, Segmentation};
use crate::numerics::{BoundParams, Dropout, Graph, NumericsError, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: EncoderVariant,
    /// Longest candidate segment.
    pub max_seg_len: usize,
    #[serde(default)]
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn new(variant: EncoderVariant, max_seg_len: usize, encoder: EncoderConfig) -> Self {
        ModelConfig {
            variant,
            max_seg_len,
            encoder,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs: Vec<String> = self
            .encoder
            .validate(self.variant)
            .into_iter()
            .map(|e| format!("model.encoder.{e}"))
            .collect();
        if self.max_seg_len == 0 {
            errs.push("model.max_seg_len: must be at least 1".into());
        }
        errs
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// Packed `M x k` lattice.
    pub lattice: Var,
    pub layout: LatticeLayout,
    /// `S x 1` column of per-sequence log-likelihoods.
    pub marginals: Var,
}

#[derive(Debug, Clone)]
pub struct SegmentalModel<F: Scalar> {
    cfg: ModelConfig,
    vocab_size: usize,
    store: ParamStore<F>,
    embedding: ParamId,
    encoder: ContextEncoder,
    decoder: SegmentDecoder,
}

impl<F: Scalar> SegmentalModel<F> {
    /// Fresh parameters drawn from `seed`.
    pub fn new(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.encoder.d_model;
        let embedding = store.normal("embedding", vocab_size, d, (d as f64).powf(-0.5), &mut rng);
        let encoder = ContextEncoder::new(&cfg.encoder, cfg.variant, cfg.max_seg_len, &mut store, &mut rng);
        let decoder = SegmentDecoder::new(
            d,
            vocab_size,
            cfg.max_seg_len,
            cfg.encoder.dropout_in,
            &mut store,
            &mut rng,
        );
        SegmentalModel {
            cfg: cfg.clone(),
            vocab_size,
            store,
            embedding,
            encoder,
            decoder,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    /// Overwrites the embedding table, e.g. with CBOW vectors.
    pub fn set_embeddings(&mut self, table: &Array2<f64>) -> Result<(), ModelError> {
        let want = self.store.get(self.embedding).dim();
        if table.dim() != want {
            return Err(ModelError::Invalid(format!(
                "embedding table is {:?}, model expects {:?}",
                table.dim(),
                want
            )));
        }
        *self.store.get_mut(self.embedding) = table.mapv(F::of);
        Ok(())
    }

    /// Lattice and marginals for `seqs` on `g`, with parameters bound as `p`.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        seqs: &[&[usize]],
        dropout: &mut Dropout<'_>,
    ) -> Result<ModelOutput, ModelError> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(ModelError::Invalid("sequences must be non-empty".into()));
        }
        if let Some(bad) = seqs.iter().flat_map(|s| s.iter()).find(|&&c| c >= self.vocab_size) {
            return Err(ModelError::Invalid(format!(
                "character id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let prefixed_lens: Vec<usize> = seqs.iter().map(|s| s.len() + 1).collect();
        let packing = Packing::from_lens(&prefixed_lens);
        let ids: Vec<usize> = seqs
            .iter()
            .flat_map(|s| std::iter::once(BOS).chain(s.iter().copied()))
            .collect();
        let table = p.var(self.embedding);
        let inputs = g.gather_rows(table, Arc::new(ids))?;
        let contexts = self.encoder.encode(g, p, inputs, &packing, dropout)?;
        let (lattice, layout) = self
            .decoder
            .segment_logprobs(g, p, contexts, &packing, seqs, table, dropout)?;
        let op = ForwardMarginal::new(layout.starts.clone(), layout.k);
        let marginals = g.custom(Arc::new(op), &[lattice])?;
        Ok(ModelOutput {
            lattice,
            layout,
            marginals,
        })
    }

    /// Mean negative log-likelihood per character (nats) as a `1 x 1` node.
    pub fn sequence_loss(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        seqs: &[&[usize]],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, ModelOutput), ModelError> {
        let out = self.forward(g, p, seqs, dropout)?;
        let chars: usize = seqs.iter().map(|s| s.len()).sum();
        let total = g.sum(out.marginals)?;
        let loss = g.scale(total, F::of(-1.0 / chars as f64))?;
        Ok((loss, out))
    }

    /// Evaluation-mode lattices, one per sequence.
    pub fn lattices(&self, seqs: &[&[usize]]) -> Result<Vec<SegmentLattice>, ModelError> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let out = self.forward(&mut g, &p, seqs, &mut Dropout::Off)?;
        Ok(out.layout.lattices(g.value(out.lattice))?)
    }

    /// Evaluation-mode lattices over many sequences, built in groups of at
    /// most `char_budget` characters to bound memory.
    pub fn lattices_chunked(&self, seqs: &[&[usize]], char_budget: usize) -> Result<Vec<SegmentLattice>, ModelError> {
        let mut out = Vec::with_capacity(seqs.len());
        let mut start = 0;
        while start < seqs.len() {
            let mut end = start + 1;
            let mut chars = seqs[start].len();
            while end < seqs.len() && chars + seqs[end].len() <= char_budget {
                chars += seqs[end].len();
                end += 1;
            }
            out.extend(self.lattices(&seqs[start..end])?);
            start = end;
        }
        Ok(out)
    }

    /// Maximum-probability segmentation of each sequence.
    pub fn segment(&self, seqs: &[&[usize]], char_budget: usize) -> Result<Vec<Segmentation>, ModelError> {
        Ok(self
            .lattices_chunked(seqs, char_budget)?
            .iter()
            .map(|l| viterbi(l).0)
            .collect())
    }

    /// Replaces every parameter value, keeping names and shapes.
    pub fn load_values(&mut self, values: Vec<Tensor<F>>) -> Result<(), ModelError> {
        if values.len() != self.store.len() {
            return Err(ModelError::Invalid(format!(
                "{} tensors for {} parameters",
                values.len(),
                self.store.len()
            )));
        }
        for ((name, slot), v) in self.store.iter().zip(&values) {
            if slot.dim() != v.dim() {
                return Err(ModelError::Invalid(format!(
                    "parameter {name} has shape {:?}, got {:?}",
                    slot.dim(),
                    v.dim()
                )));
            }
        }
        for (slot, v) in self.store.values_mut().iter_mut().zip(values) {
            *slot = v;
        }
        Ok(())
    }
}
