//! Seeded lexicon corpora with known word boundaries.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedAliasIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::TextLine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconSpec {
    pub words: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub min_sentence_words: usize,
    pub max_sentence_words: usize,
    /// Zipf exponent of the word frequency distribution.
    pub zipf_exponent: f64,
    pub alphabet: String,
    pub seed: u64,
}

impl Default for LexiconSpec {
    fn default() -> Self {
        LexiconSpec {
            words: 20,
            min_word_len: 2,
            max_word_len: 5,
            min_sentence_words: 4,
            max_sentence_words: 10,
            zipf_exponent: 1.0,
            alphabet: "abcdefghijklmnopqrstuvwxyz".into(),
            seed: 0,
        }
    }
}

/// A generated lexicon together with its sampling distribution.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub words: Vec<String>,
    pub weights: Vec<f64>,
    spec: LexiconSpec,
}

impl Lexicon {
    pub fn generate(spec: &LexiconSpec) -> Self {
        assert!(spec.min_word_len >= 1 && spec.min_word_len <= spec.max_word_len);
        assert!(spec.min_sentence_words >= 1 && spec.min_sentence_words <= spec.max_sentence_words);
        let alphabet: Vec<char> = spec.alphabet.chars().collect();
        assert!(!alphabet.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut seen = HashSet::new();
        let mut words = Vec::with_capacity(spec.words);
        while words.len() < spec.words {
            let len = rng.random_range(spec.min_word_len..=spec.max_word_len);
            let w: String = (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let weights = (1..=spec.words)
            .map(|rank| 1.0 / (rank as f64).powf(spec.zipf_exponent))
            .collect();
        Lexicon {
            words,
            weights,
            spec: spec.clone(),
        }
    }

    /// `count` sentences of i.i.d. words; `stream` separates independent draws.
    pub fn sentences(&self, count: usize, stream: u64) -> Vec<TextLine> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream + 1);
        let dist = WeightedAliasIndex::new(self.weights.clone()).expect("positive weights");
        (0..count)
            .map(|_| {
                let n = rng.random_range(self.spec.min_sentence_words..=self.spec.max_sentence_words);
                let mut chars = Vec::new();
                let mut boundaries = Vec::new();
                for k in 0..n {
                    if k > 0 {
                        boundaries.push(chars.len());
                    }
                    chars.extend(self.words[dist.sample(&mut rng)].chars());
                }
                TextLine {
                    chars,
                    boundaries: Some(boundaries),
                }
            })
            .collect()
    }
}
