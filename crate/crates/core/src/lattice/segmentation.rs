use serde::{Deserialize, Serialize};

use super::LatticeError;

/// Ordered segment lengths covering a whole sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segmentation {
    lengths: Vec<usize>,
}

impl Segmentation {
    /// Checks that every length is positive and the lengths sum to `n`.
    pub fn new(lengths: Vec<usize>, n: usize) -> Result<Self, LatticeError> {
        if lengths.iter().any(|&l| l == 0) {
            return Err(LatticeError::InvalidSegmentation("zero-length segment".into()));
        }
        let total: usize = lengths.iter().sum();
        if total != n {
            return Err(LatticeError::InvalidSegmentation(format!(
                "segments cover {total} characters, sequence has {n}"
            )));
        }
        Ok(Segmentation { lengths })
    }

    /// From internal boundary positions (each `0 < b < n`, strictly increasing).
    pub fn from_boundaries(boundaries: &[usize], n: usize) -> Result<Self, LatticeError> {
        let mut lengths = Vec::with_capacity(boundaries.len() + 1);
        let mut prev = 0;
        for &b in boundaries {
            if b <= prev || b >= n {
                return Err(LatticeError::InvalidSegmentation(format!(
                    "boundary {b} out of order or outside (0, {n})"
                )));
            }
            lengths.push(b - prev);
            prev = b;
        }
        if n > 0 {
            lengths.push(n - prev);
        }
        Segmentation::new(lengths, n)
    }

    /// One segment per character.
    pub fn singletons(n: usize) -> Self {
        Segmentation { lengths: vec![1; n] }
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Number of characters covered.
    pub fn total(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn boundaries(&self) -> Vec<usize> {
        let mut at = 0;
        let mut out = Vec::with_capacity(self.lengths.len().saturating_sub(1));
        for &l in &self.lengths[..self.lengths.len().saturating_sub(1)] {
            at += l;
            out.push(at);
        }
        out
    }

    /// `(start, end)` half-open span of every segment.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.lengths
            .iter()
            .map(|&l| {
                let span = (at, at + l);
                at += l;
                span
            })
            .collect()
    }

    /// Characters with a single space between segments.
    pub fn render(&self, chars: &[char]) -> String {
        crate::corpus::render_with_boundaries(chars, &self.boundaries())
    }
}

/// Parses a space-delimited segmented line into its characters and segmentation.
pub fn parse_segmented(line: &str) -> Result<(Vec<char>, Segmentation), LatticeError> {
    let parsed = crate::corpus::parse_line(line, true)
        .ok_or_else(|| LatticeError::InvalidSegmentation("empty line".into()))?;
    let seg = Segmentation::from_boundaries(parsed.boundaries.as_deref().unwrap_or(&[]), parsed.chars.len())?;
    Ok((parsed.chars, seg))
}
