use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::CharSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CbowConfig {
    fn default() -> Self {
        CbowConfig {
            dim: 256,
            window: 5,
            epochs: 32,
            negatives: 5,
            learning_rate: 0.05,
            seed: 2,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Continuous bag-of-words with negative sampling over character ids.
///
/// Returns the input-side vectors, one row per vocabulary index. Rows for ids
/// that never occur keep their random initialization.
pub fn pretrain_cbow(seqs: &[CharSequence], vocab_size: usize, cfg: &CbowConfig) -> Array2<f64> {
    assert!(cfg.dim > 0, "embedding dim must be positive");
    assert!(cfg.window >= 1, "window must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = 0.5 / cfg.dim as f64;
    let mut input = Array2::from_shape_fn((vocab_size, cfg.dim), |_| rng.random_range(-half..half));
    let mut output = Array2::<f64>::zeros((vocab_size, cfg.dim));

    let mut counts = vec![0f64; vocab_size];
    for s in seqs {
        for &c in &s.ids {
            counts[c] += 1.0;
        }
    }
    let total: usize = seqs.iter().map(|s| s.len()).sum();
    if cfg.epochs == 0 || total == 0 {
        return input;
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c.powf(0.75)).collect();
    let noise = WeightedAliasIndex::new(weights).expect("corpus has at least one character");

    let steps = (cfg.epochs * total) as f64;
    let mut done = 0usize;
    let mut hidden = vec![0f64; cfg.dim];
    let mut grad_hidden = vec![0f64; cfg.dim];
    for _ in 0..cfg.epochs {
        for s in seqs {
            let n = s.len();
            for t in 0..n {
                let lr = (cfg.learning_rate * (1.0 - done as f64 / steps)).max(cfg.learning_rate * 1e-4);
                done += 1;
                let lo = t.saturating_sub(cfg.window);
                let hi = (t + cfg.window + 1).min(n);
                let ctx: Vec<usize> = (lo..hi).filter(|&j| j != t).map(|j| s.ids[j]).collect();
                if ctx.is_empty() {
                    continue;
                }
                hidden.iter_mut().for_each(|h| *h = 0.0);
                for &c in &ctx {
                    for (h, v) in hidden.iter_mut().zip(input.row(c)) {
                        *h += v;
                    }
                }
                let inv = 1.0 / ctx.len() as f64;
                hidden.iter_mut().for_each(|h| *h *= inv);
                grad_hidden.iter_mut().for_each(|g| *g = 0.0);

                let target = s.ids[t];
                for k in 0..=cfg.negatives {
                    let (word, label) = if k == 0 {
                        (target, 1.0)
                    } else {
                        let w = noise.sample(&mut rng);
                        if w == target {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let mut out_row = output.row_mut(word);
                    let score: f64 = hidden.iter().zip(out_row.iter()).map(|(a, b)| a * b).sum();
                    let g = (label - sigmoid(score)) * lr;
                    for ((gh, o), h) in grad_hidden.iter_mut().zip(out_row.iter_mut()).zip(&hidden) {
                        *gh += g * *o;
                        *o += g * h;
                    }
                }
                for &c in &ctx {
                    for (v, g) in input.row_mut(c).iter_mut().zip(&grad_hidden) {
                        *v += g * inv;
                    }
                }
            }
        }
    }
    input
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(m: &Array2<f64>, a: usize, b: usize) -> f64 {
        let (x, y) = (m.row(a), m.row(b));
        x.dot(&y) / (x.dot(&x).sqrt() * y.dot(&y).sqrt())
    }

    #[test]
    fn zero_epochs_is_random_init() {
        let seqs = vec![CharSequence { ids: vec![5, 6, 7], gold: None }];
        let cfg = CbowConfig { dim: 8, epochs: 0, ..Default::default() };
        let a = pretrain_cbow(&seqs, 9, &cfg);
        let b = pretrain_cbow(&[], 9, &cfg);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 0.5 / 8.0));
    }

    #[test]
    fn co_occurring_chars_end_up_closer() {
        // ids 5..9 only ever share lines with each other, 9..13 likewise.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seqs: Vec<CharSequence> = (0..300)
            .map(|i| {
                let base = if i % 2 == 0 { 5 } else { 9 };
                CharSequence {
                    ids: (0..12).map(|_| base + rng.random_range(0..4)).collect(),
                    gold: None,
                }
            })
            .collect();
        let cfg = CbowConfig { dim: 16, window: 3, epochs: 5, ..Default::default() };
        let m = pretrain_cbow(&seqs, 13, &cfg);
        let (a, b, c) = (5, 6, 9);
        assert!(cosine(&m, a, b) > cosine(&m, a, c), "{} vs {}", cosine(&m, a, b), cosine(&m, a, c));
    }

    #[test]
    fn unseen_rows_keep_initialization() {
        let seqs = vec![CharSequence { ids: vec![5, 6, 5, 6, 5], gold: None }];
        let cfg = CbowConfig { dim: 4, epochs: 3, ..Default::default() };
        let trained = pretrain_cbow(&seqs, 8, &cfg);
        let init = pretrain_cbow(&seqs, 8, &CbowConfig { epochs: 0, ..cfg.clone() });
        for special in 0..5 {
            assert_eq!(trained.row(special), init.row(special));
        }
        assert_ne!(trained.row(5), init.row(5));
    }
}
