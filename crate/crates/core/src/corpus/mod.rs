//! Line-based corpora: loading, gold boundaries, vocabularies, batching and
//! CBOW pretraining of character embeddings.

mod batch;
mod cbow;
mod embeddings;
pub mod synthetic;
mod vocab;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{make_batches, Batch};
pub use cbow::{pretrain_cbow, CbowConfig};
pub use embeddings::{parse_embeddings, write_embeddings};
pub use vocab::{
    build_vocab, Vocabulary, BOS, EOS, EOSEG, NUM_SPECIALS, PAD, SPECIAL_NAMES, UNK,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("corpus is empty")]
    Empty,
}

/// One corpus line with spaces removed. `boundaries` holds every internal
/// position `b` (0 < b < len) such that a word ends after character `b - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextLine {
    pub chars: Vec<char>,
    pub boundaries: Option<Vec<usize>>,
}

impl TextLine {
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }

    /// Gold rendering: characters with a single space at each boundary.
    pub fn to_gold_string(&self) -> String {
        render_with_boundaries(&self.chars, self.boundaries.as_deref().unwrap_or(&[]))
    }

    pub fn word_count(&self) -> Option<usize> {
        self.boundaries.as_ref().map(|b| b.len() + 1)
    }
}

/// A line as vocabulary indices (no specials besides UNK) plus optional gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSequence {
    pub ids: Vec<usize>,
    pub gold: Option<Vec<usize>>,
}

impl CharSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Characters joined with single spaces before every boundary position.
pub fn render_with_boundaries(chars: &[char], boundaries: &[usize]) -> String {
    let mut out = String::with_capacity(chars.len() + boundaries.len());
    let mut next = boundaries.iter().peekable();
    for (i, &c) in chars.iter().enumerate() {
        if next.peek() == Some(&&i) {
            out.push(' ');
            next.next();
        }
        out.push(c);
    }
    out
}

/// Parsed corpus plus the number of whitespace-only lines that were skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub lines: Vec<TextLine>,
    pub skipped_blank: usize,
}

/// Splits one line into characters and (when `has_gold`) word boundaries.
/// Runs of spaces count as a single separator. Returns `None` for lines
/// with no content.
pub fn parse_line(line: &str, has_gold: bool) -> Option<TextLine> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut chars = Vec::with_capacity(line.len());
    let mut boundaries = Vec::new();
    let mut pending = false;
    for c in line.chars() {
        if c == ' ' {
            pending = !chars.is_empty();
            continue;
        }
        if pending {
            boundaries.push(chars.len());
            pending = false;
        }
        chars.push(c);
    }
    if chars.iter().all(|c| c.is_whitespace()) {
        return None;
    }
    Some(TextLine {
        chars,
        boundaries: has_gold.then_some(boundaries),
    })
}

/// Parses UTF-8 text with one sentence per line. Empty lines are dropped
/// silently; whitespace-only lines are dropped and counted.
pub fn parse_corpus(text: &str, has_gold: bool) -> Corpus {
    let mut corpus = Corpus::default();
    for raw in text.split('\n') {
        let trimmed = raw.strip_suffix('\r').unwrap_or(raw);
        if trimmed.is_empty() {
            continue;
        }
        match parse_line(trimmed, has_gold) {
            Some(l) => corpus.lines.push(l),
            None => corpus.skipped_blank += 1,
        }
    }
    corpus
}

pub fn load_corpus(path: impl AsRef<Path>, has_gold: bool) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let corpus = parse_corpus(&text, has_gold);
    if corpus.skipped_blank > 0 {
        log::warn!(
            "{}: skipped {} whitespace-only lines",
            path.display(),
            corpus.skipped_blank
        );
    }
    Ok(corpus)
}

/// Dataset statistics in the layout of a corpus summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub tokens: usize,
    pub words: Option<usize>,
    pub lines: usize,
    pub avg_chars_per_word: Option<f64>,
    pub vocab_size: usize,
}

pub fn corpus_stats(lines: &[TextLine]) -> CorpusStats {
    let tokens = lines.iter().map(|l| l.len()).sum();
    let words = lines
        .iter()
        .map(|l| l.word_count())
        .sum::<Option<usize>>();
    let mut distinct: Vec<char> = lines.iter().flat_map(|l| l.chars.iter().copied()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    CorpusStats {
        tokens,
        words,
        lines: lines.len(),
        avg_chars_per_word: words.filter(|&w| w > 0).map(|w| tokens as f64 / w as f64),
        vocab_size: distinct.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gold_line() {
        let c = parse_corpus("ab c\n", true);
        assert_eq!(c.lines[0].text(), "abc");
        assert_eq!(c.lines[0].boundaries, Some(vec![2]));
    }

    #[test]
    fn plain_line() {
        let c = parse_corpus("abc", false);
        assert_eq!(c.lines[0].text(), "abc");
        assert_eq!(c.lines[0].boundaries, None);
    }

    #[test]
    fn blank_and_whitespace_lines() {
        let c = parse_corpus("ab\n\n   \n\t\ncd\r\n", true);
        assert_eq!(c.lines.len(), 2);
        assert_eq!(c.skipped_blank, 2);
        assert_eq!(c.lines[1].text(), "cd");
    }

    #[test]
    fn runs_of_spaces_collapse() {
        let c = parse_corpus("  ab   c d  ", true);
        assert_eq!(c.lines[0].boundaries, Some(vec![2, 3]));
        assert_eq!(c.lines[0].to_gold_string(), "ab c d");
    }

    #[test]
    fn stats_by_hand() {
        let s = corpus_stats(&parse_corpus("ab c", true).lines);
        assert_eq!(s.tokens, 3);
        assert_eq!(s.words, Some(2));
        assert_eq!(s.avg_chars_per_word, Some(1.5));
        let s = corpus_stats(&parse_corpus("ab c\nde", true).lines);
        assert_eq!((s.tokens, s.words, s.lines), (5, Some(3), 2));
    }

    #[test]
    fn stats_without_gold() {
        let s = corpus_stats(&parse_corpus("ab c", false).lines);
        assert_eq!(s.words, None);
        assert_eq!(s.avg_chars_per_word, None);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_corpus("/definitely/not/here.txt", true).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    proptest! {
        #[test]
        fn gold_round_trip(words in proptest::collection::vec("[a-z\u{4e00}-\u{4e10}]{1,6}", 1..10)) {
            let line = words.join(" ");
            let c = parse_corpus(&line, true);
            prop_assert_eq!(c.lines.len(), 1);
            let l = &c.lines[0];
            prop_assert_eq!(l.to_gold_string(), line);
            for &b in l.boundaries.as_ref().unwrap() {
                prop_assert!(b > 0 && b < l.len());
            }
        }
    }
}
