//! Segmentation quality and language-modelling metrics.

use std::collections::HashSet;
use std::fmt;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CharSequence;
use crate::lattice::{forward_marginal, parse_segmented, viterbi, LatticeError, Segmentation};
use crate::model::SegmentalModel;
use crate::numerics::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("segmentation of different text (line {line})")]
    DifferentText { line: usize },
    #[error("{hyp} hypothesis lines for {reference} reference lines")]
    LineCount { hyp: usize, reference: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Parse(#[from] LatticeError),
    #[error("model evaluation failed: {0}")]
    Model(String),
}

/// Word-level precision, recall and F1, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub hyp_words: usize,
    pub ref_words: usize,
}

/// Boundary classification over internal positions. Precision and recall
/// are percentages; `mcc` lies in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScores {
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub word_precision: f64,
    pub word_recall: f64,
    pub word_f1: f64,
    pub boundary_precision: f64,
    pub boundary_recall: f64,
    pub boundary_mcc: f64,
    pub bpc: f64,
    pub avg_word_length: f64,
}

impl MetricsReport {
    pub fn from_parts(words: &WordScores, boundaries: &BoundaryScores, bpc: f64, avg_word_length: f64) -> Self {
        MetricsReport {
            word_precision: words.precision,
            word_recall: words.recall,
            word_f1: words.f1,
            boundary_precision: boundaries.precision,
            boundary_recall: boundaries.recall,
            boundary_mcc: boundaries.mcc,
            bpc,
            avg_word_length,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("word precision", self.word_precision),
            ("word recall", self.word_recall),
            ("word F1", self.word_f1),
            ("boundary precision", self.boundary_precision),
            ("boundary recall", self.boundary_recall),
            ("boundary MCC", self.boundary_mcc),
            ("bpc", self.bpc),
            ("avg word length", self.avg_word_length),
        ];
        for (name, value) in rows {
            writeln!(f, "{name:<20} {value:>10.4}")?;
        }
        Ok(())
    }
}

fn check_pairs(hyp: &[Segmentation], reference: &[Segmentation]) -> Result<(), EvalError> {
    if hyp.len() != reference.len() {
        return Err(EvalError::LineCount {
            hyp: hyp.len(),
            reference: reference.len(),
        });
    }
    for (line, (h, r)) in hyp.iter().zip(reference).enumerate() {
        if h.total() != r.total() {
            return Err(EvalError::DifferentText { line });
        }
    }
    Ok(())
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Corpus-level word scores: a hypothesis word counts when its span
/// matches a reference word exactly. Counts are pooled over all lines.
pub fn word_prf(hyp: &[Segmentation], reference: &[Segmentation]) -> Result<WordScores, EvalError> {
    check_pairs(hyp, reference)?;
    let (mut correct, mut hyp_words, mut ref_words) = (0, 0, 0);
    for (h, r) in hyp.iter().zip(reference) {
        let gold: HashSet<(usize, usize)> = r.spans().into_iter().collect();
        correct += h.spans().iter().filter(|s| gold.contains(s)).count();
        hyp_words += h.len();
        ref_words += r.len();
    }
    let precision = percent(correct, hyp_words);
    let recall = percent(correct, ref_words);
    Ok(WordScores {
        precision,
        recall,
        f1: harmonic(precision, recall),
        correct,
        hyp_words,
        ref_words,
    })
}

/// Boundary versus no-boundary decisions at every internal position.
pub fn boundary_stats(hyp: &[Segmentation], reference: &[Segmentation]) -> Result<BoundaryScores, EvalError> {
    check_pairs(hyp, reference)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (h, r) in hyp.iter().zip(reference) {
        let n = r.total();
        let hb: HashSet<usize> = h.boundaries().into_iter().collect();
        let rb: HashSet<usize> = r.boundaries().into_iter().collect();
        for pos in 1..n {
            match (hb.contains(&pos), rb.contains(&pos)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    Ok(BoundaryScores {
        precision: percent(tp, tp + fp),
        recall: percent(tp, tp + fn_),
        mcc: mcc(tp, fp, fn_, tn),
        tp,
        fp,
        fn_,
        tn,
    })
}

/// Matthews correlation of a 2x2 confusion matrix; 0 when any marginal is empty.
pub fn mcc(tp: usize, fp: usize, fn_: usize, tn: usize) -> f64 {
    let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
    let marginals = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if marginals.iter().any(|&m| m == 0.0) {
        return 0.0;
    }
    (tp * tn - fp * fn_) / marginals.iter().product::<f64>().sqrt()
}

/// Characters per segment, pooled over all lines.
pub fn avg_word_length(segs: &[Segmentation]) -> Result<f64, EvalError> {
    let words: usize = segs.iter().map(|s| s.len()).sum();
    if words == 0 {
        return Err(EvalError::Empty);
    }
    let chars: usize = segs.iter().map(|s| s.total()).sum();
    Ok(chars as f64 / words as f64)
}

/// Bits per character from per-sequence natural-log likelihoods.
pub fn bpc_from_loglik(logliks: &[f64], chars: usize) -> Result<f64, EvalError> {
    if chars == 0 {
        return Err(EvalError::Empty);
    }
    Ok(-logliks.iter().sum::<f64>() / (LN_2 * chars as f64))
}

/// Parses paired lines of segmented text and checks they spell the same
/// characters.
pub fn parse_pairs(hyp: &[&str], reference: &[&str]) -> Result<(Vec<Segmentation>, Vec<Segmentation>), EvalError> {
    if hyp.len() != reference.len() {
        return Err(EvalError::LineCount {
            hyp: hyp.len(),
            reference: reference.len(),
        });
    }
    let mut hs = Vec::with_capacity(hyp.len());
    let mut rs = Vec::with_capacity(hyp.len());
    for (line, (h, r)) in hyp.iter().zip(reference).enumerate() {
        let (hc, hseg) = parse_segmented(h)?;
        let (rc, rseg) = parse_segmented(r)?;
        if hc != rc {
            return Err(EvalError::DifferentText { line });
        }
        hs.push(hseg);
        rs.push(rseg);
    }
    Ok((hs, rs))
}

/// Bits per character of `seqs` under `model`, dropout off.
pub fn bpc<F: Scalar>(model: &SegmentalModel<F>, seqs: &[&[usize]], char_budget: usize) -> Result<f64, EvalError> {
    let lats = model
        .lattices_chunked(seqs, char_budget)
        .map_err(|e| EvalError::Model(e.to_string()))?;
    let logliks: Vec<f64> = lats.iter().map(forward_marginal).collect();
    bpc_from_loglik(&logliks, seqs.iter().map(|s| s.len()).sum())
}

/// Every metric for gold-annotated sequences, from one pass over the lattices.
pub fn evaluate<F: Scalar>(
    model: &SegmentalModel<F>,
    seqs: &[CharSequence],
    char_budget: usize,
) -> Result<(MetricsReport, Vec<Segmentation>), EvalError> {
    if seqs.is_empty() {
        return Err(EvalError::Empty);
    }
    let refs: Vec<&[usize]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
    let lats = model
        .lattices_chunked(&refs, char_budget)
        .map_err(|e| EvalError::Model(e.to_string()))?;
    let logliks: Vec<f64> = lats.iter().map(forward_marginal).collect();
    let hyp: Vec<Segmentation> = lats.iter().map(|l| viterbi(l).0).collect();
    let gold = seqs
        .iter()
        .map(|s| Segmentation::from_boundaries(s.gold.as_deref().unwrap_or(&[]), s.len()))
        .collect::<Result<Vec<_>, _>>()?;
    let words = word_prf(&hyp, &gold)?;
    let bounds = boundary_stats(&hyp, &gold)?;
    let bpc = bpc_from_loglik(&logliks, refs.iter().map(|s| s.len()).sum())?;
    let report = MetricsReport::from_parts(&words, &bounds, bpc, avg_word_length(&hyp)?);
    Ok((report, hyp))
}

#[cfg(test)]
mod tests;
