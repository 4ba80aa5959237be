//! Segment lattices: per-segment log-probabilities from the segment decoder,
//! the forward marginal over all segmentations, Viterbi decoding, and the
//! exhaustive oracles both are tested against.

mod brute;
mod decoder;
mod dp;
mod marginal;
mod segmentation;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use brute::{
    brute_force_best, brute_force_marginal, enumerate_segmentations, segmentation_score, BRUTE_FORCE_MAX_LEN,
};
pub use decoder::{DecoderBridge, LatticeLayout, SegmentDecoder};
pub use marginal::ForwardMarginal;
pub use segmentation::{parse_segmented, Segmentation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("sequence of length {n} is too long for enumeration (max {max})")]
    TooLong { n: usize, max: usize },
    #[error("empty lattice")]
    Empty,
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("lattice entry ({i}, {l}) is {value}; entries must be finite log-probabilities")]
    BadEntry { i: usize, l: usize, value: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Log-probability of every candidate segment of one sequence.
///
/// Entry `(i, l)` exists for `1 <= l <= min(k, n - i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLattice {
    n: usize,
    k: usize,
    logp: Vec<f64>,
}

impl SegmentLattice {
    /// Builds a lattice from `entry(i, l)` over the valid range.
    pub fn from_fn(n: usize, k: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Result<Self, LatticeError> {
        if n == 0 || k == 0 {
            return Err(LatticeError::Empty);
        }
        let mut logp = vec![f64::NAN; n * k];
        for i in 0..n {
            for l in 1..=k.min(n - i) {
                let v = entry(i, l);
                if v.is_nan() || v == f64::INFINITY {
                    return Err(LatticeError::BadEntry { i, l, value: v });
                }
                logp[i * k + l - 1] = v;
            }
        }
        Ok(SegmentLattice { n, k, logp })
    }

    /// From an `n x k` row-major block where row `i`, column `l - 1` holds
    /// entry `(i, l)`. Cells outside the valid range are ignored.
    pub fn from_rows(n: usize, k: usize, rows: &[f64]) -> Result<Self, LatticeError> {
        if rows.len() != n * k {
            return Err(LatticeError::InvalidSegmentation(format!(
                "expected {} lattice cells, got {}",
                n * k,
                rows.len()
            )));
        }
        Self::from_fn(n, k, |i, l| rows[i * k + l - 1])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, l: usize) -> Option<f64> {
        (i < self.n && l >= 1 && l <= self.k.min(self.n - i)).then(|| self.logp[i * self.k + l - 1])
    }

    fn at(&self, i: usize, l: usize) -> f64 {
        self.logp[i * self.k + l - 1]
    }

    /// Log-domain forward variables `alpha_0 ..= alpha_n`.
    pub fn alphas(&self) -> Vec<f64> {
        dp::forward_alphas(self.n, self.k, |i, l| self.at(i, l))
    }

    /// Log-domain backward variables `beta_0 ..= beta_n`.
    pub fn betas(&self) -> Vec<f64> {
        dp::backward_betas(self.n, self.k, |i, l| self.at(i, l))
    }
}

/// Total log-probability of the sequence, marginalised over segmentations.
pub fn forward_marginal(lattice: &SegmentLattice) -> f64 {
    lattice.alphas()[lattice.n]
}

/// Maximum-probability segmentation and its log score.
pub fn viterbi(lattice: &SegmentLattice) -> (Segmentation, f64) {
    let (lengths, score) = dp::viterbi_path(lattice.n, lattice.k, |i, l| lattice.at(i, l));
    let seg = Segmentation::new(lengths, lattice.n).expect("viterbi path covers the sequence");
    (seg, score)
}

#[cfg(test)]
mod tests;
