use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::corpus::{EOSEG, PAD};
use crate::encoder::{lstm_cell, lstm_cell_projected, LstmParams, Packing};
use crate::numerics::{BoundParams, Dropout, Graph, NumericsError, ParamId, ParamStore, Scalar, Tensor, Var};

use super::{LatticeError, SegmentLattice};

/// Affine maps from a context vector to the decoder's initial hidden state
/// (`g_h`) and to its first input (`g_start`).
#[derive(Debug, Clone)]
pub struct DecoderBridge {
    pub h_w: ParamId,
    pub h_b: ParamId,
    pub start_w: ParamId,
    pub start_b: ParamId,
}

/// Rows of a packed lattice: sequence `s` owns `lens[s]` consecutive rows,
/// one per start position, each with `k` length columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeLayout {
    pub starts: Packing,
    pub k: usize,
}

impl LatticeLayout {
    /// Splits evaluated lattice values into one [`SegmentLattice`] per sequence.
    pub fn lattices<F: Scalar>(&self, values: &Tensor<F>) -> Result<Vec<SegmentLattice>, LatticeError> {
        self.starts
            .offsets
            .iter()
            .zip(&self.starts.lens)
            .map(|(&off, &n)| SegmentLattice::from_fn(n, self.k, |i, l| values[[off + i, l - 1]].as_f64()))
            .collect()
    }
}

/// LSTM that scores every candidate segment, character by character, closing
/// each with an end-of-segment symbol.
#[derive(Debug, Clone)]
pub struct SegmentDecoder {
    bridge: DecoderBridge,
    lstm: LstmParams,
    out_w: ParamId,
    out_b: ParamId,
    max_seg_len: usize,
    dropout_in: f64,
}

impl SegmentDecoder {
    /// Registers parameters under `decoder.`. Inputs are rows of the shared
    /// character embedding table, so the input width is `d_model`.
    pub fn new<F: Scalar, R: Rng>(
        d_model: usize,
        vocab_size: usize,
        max_seg_len: usize,
        dropout_in: f64,
        store: &mut ParamStore<F>,
        rng: &mut R,
    ) -> Self {
        let bridge = DecoderBridge {
            h_w: store.glorot("decoder.g_h.w", d_model, d_model, rng),
            h_b: store.zeros("decoder.g_h.b", 1, d_model),
            start_w: store.glorot("decoder.g_start.w", d_model, d_model, rng),
            start_b: store.zeros("decoder.g_start.b", 1, d_model),
        };
        let lstm = LstmParams::new(store, "decoder.lstm", d_model, d_model, rng);
        SegmentDecoder {
            bridge,
            lstm,
            out_w: store.glorot("decoder.out.w", d_model, vocab_size, rng),
            out_b: store.zeros("decoder.out.b", 1, vocab_size),
            max_seg_len,
            dropout_in,
        }
    }

    pub fn max_seg_len(&self) -> usize {
        self.max_seg_len
    }

    /// Builds the packed lattice for `seqs`.
    ///
    /// `contexts` holds encoder outputs laid out by `context_packing`, which
    /// must be the BOS-prefixed packing of `seqs`; the row at prefixed
    /// position `i` conditions segments starting at original index `i`.
    /// One roll-out of `k` characters per start serves every length: the
    /// character log-probabilities are prefix-summed and the EOSEG
    /// log-probability after `l` characters is added to column `l - 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn segment_logprobs<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        p: &BoundParams,
        contexts: Var,
        context_packing: &Packing,
        seqs: &[&[usize]],
        embedding: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, LatticeLayout), NumericsError> {
        let k = self.max_seg_len;
        if seqs.len() != context_packing.lens.len()
            || seqs.iter().zip(&context_packing.lens).any(|(s, &m)| s.len() + 1 != m)
        {
            return Err(NumericsError::Invalid(
                "context packing does not match the BOS-prefixed sequences".into(),
            ));
        }
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let starts = Packing::from_lens(&lens);

        // (sequence, start) for every lattice row
        let mut rows = Vec::with_capacity(starts.total());
        let mut ctx_rows = Vec::with_capacity(starts.total());
        for (s, seq) in seqs.iter().enumerate() {
            for i in 0..seq.len() {
                rows.push((s, i));
                ctx_rows.push(context_packing.row(s, i));
            }
        }
        let ctx = g.gather_rows(contexts, Arc::new(ctx_rows))?;
        let h0 = g.matmul(ctx, p.var(self.bridge.h_w))?;
        let mut h = g.add_row(h0, p.var(self.bridge.h_b))?;
        let mut c = g.constant(Tensor::zeros(g.shape(h)));
        let start = g.matmul(ctx, p.var(self.bridge.start_w))?;
        let start = g.add_row(start, p.var(self.bridge.start_b))?;

        // Every roll-out that reads character t shares one input row, with
        // one dropout mask, so the input projection is done once per
        // character; the extra final row stands in past the sequence end.
        let total = starts.total();
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).chain([PAD]).collect();
        let x = g.gather_rows(embedding, Arc::new(ids))?;
        let x = dropout.apply(g, x, self.dropout_in)?;
        let projected = g.matmul(x, p.var(self.lstm.w_ih))?;

        let mut char_cols = Vec::with_capacity(k);
        let mut eos_cols = Vec::with_capacity(k);
        for j in 0..=k {
            let (hn, cn) = if j == 0 {
                lstm_cell(g, p, &self.lstm, start, h, c)?
            } else {
                let at: Vec<usize> = rows
                    .iter()
                    .map(|&(s, i)| {
                        if i + j - 1 < seqs[s].len() {
                            starts.row(s, i + j - 1)
                        } else {
                            total
                        }
                    })
                    .collect();
                let zx = g.gather_rows(projected, Arc::new(at))?;
                lstm_cell_projected(g, p, &self.lstm, zx, h, c)?
            };
            h = hn;
            c = cn;
            let logits = g.matmul(h, p.var(self.out_w))?;
            let logits = g.add_row(logits, p.var(self.out_b))?;
            let logp = g.log_softmax(logits)?;
            if j < k {
                let next: Vec<Option<usize>> = rows.iter().map(|&(s, i)| seqs[s].get(i + j).copied()).collect();
                char_cols.push(g.pick(logp, Arc::new(next))?);
            }
            if j > 0 {
                let eos: Vec<Option<usize>> = rows
                    .iter()
                    .map(|&(s, i)| (i + j <= seqs[s].len()).then_some(EOSEG))
                    .collect();
                eos_cols.push(g.pick(logp, Arc::new(eos))?);
            }
        }
        let chars = g.concat_cols(&char_cols)?;
        let prefix = g.constant(Array2::from_shape_fn((k, k), |(a, b)| if a <= b { F::one() } else { F::zero() }));
        let cum = g.matmul(chars, prefix)?;
        let eos = g.concat_cols(&eos_cols)?;
        let lattice = g.add(cum, eos)?;
        Ok((lattice, LatticeLayout { starts, k }))
    }
}
