use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A group of whole sequences whose character total fits the budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    /// Indices into the corpus the batch was built from.
    pub indices: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn total_chars(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Longest member; sequences are right-padded to this length when packed.
    pub fn max_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Greedy fill in (optionally shuffled) corpus order. A batch never exceeds
/// `char_budget` unless it holds a single sequence that is itself longer.
pub fn make_batches(lengths: &[usize], char_budget: usize, shuffle_seed: Option<u64>) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut batches = Vec::new();
    let mut current = Batch {
        indices: Vec::new(),
        lengths: Vec::new(),
    };
    let mut total = 0;
    for i in order {
        let n = lengths[i];
        if !current.is_empty() && total + n > char_budget {
            batches.push(std::mem::replace(
                &mut current,
                Batch {
                    indices: Vec::new(),
                    lengths: Vec::new(),
                },
            ));
            total = 0;
        }
        current.indices.push(i);
        current.lengths.push(n);
        total += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}
