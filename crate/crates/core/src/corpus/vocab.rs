use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::{CharSequence, CorpusError, TextLine};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// End-of-segment marker. Only ever produced by the segment decoder.
pub const EOSEG: usize = 4;
pub const NUM_SPECIALS: usize = 5;

pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>", "<eoseg>"];

const VOCAB_HEADER: &str = "#slm-vocab v1 specials=5";

/// Character inventory. Specials occupy indices `0..NUM_SPECIALS`; content
/// characters follow in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self, CorpusError> {
        let mut v = Vocabulary {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            if v.index.contains_key(&c) {
                return Err(CorpusError::Format(format!("duplicate vocabulary entry {c:?}")));
            }
            v.index.insert(c, NUM_SPECIALS + v.chars.len());
            v.chars.push(c);
        }
        Ok(v)
    }

    /// Total size including specials.
    pub fn len(&self) -> usize {
        NUM_SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of content characters.
    pub fn content_len(&self) -> usize {
        self.chars.len()
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(NUM_SPECIALS).and_then(|i| self.chars.get(i).copied())
    }

    pub fn content_chars(&self) -> &[char] {
        &self.chars
    }

    /// Maps a line to ids; unknown characters become [`UNK`]. Returns the
    /// sequence and the number of unknown characters seen.
    pub fn encode(&self, line: &TextLine) -> (CharSequence, usize) {
        let mut unknown = 0;
        let ids = line
            .chars
            .iter()
            .map(|&c| {
                self.id(c).unwrap_or_else(|| {
                    unknown += 1;
                    UNK
                })
            })
            .collect();
        (
            CharSequence {
                ids,
                gold: line.boundaries.clone(),
            },
            unknown,
        )
    }

    pub fn encode_all(&self, lines: &[TextLine]) -> (Vec<CharSequence>, usize) {
        let mut unknown = 0;
        let seqs = lines
            .iter()
            .map(|l| {
                let (s, u) = self.encode(l);
                unknown += u;
                s
            })
            .collect();
        (seqs, unknown)
    }

    /// Inverse of [`Vocabulary::encode`]; specials render as `\u{fffd}`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.char_of(i).unwrap_or('\u{fffd}'))
            .collect()
    }

    /// Vocabulary file: a header line, then one entry per line in index order.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{VOCAB_HEADER}").unwrap();
        for name in SPECIAL_NAMES {
            writeln!(out, "{name}").unwrap();
        }
        for c in &self.chars {
            writeln!(out, "{c}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.split('\n');
        match lines.next() {
            Some(h) if h == VOCAB_HEADER => {}
            other => {
                return Err(CorpusError::Format(format!(
                    "bad vocabulary header {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        for (i, name) in SPECIAL_NAMES.iter().enumerate() {
            match lines.next() {
                Some(l) if l == *name => {}
                other => {
                    return Err(CorpusError::Format(format!(
                        "expected special {name} at index {i}, found {:?}",
                        other.unwrap_or("<eof>")
                    )))
                }
            }
        }
        let mut chars = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (None, _) => continue,
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(CorpusError::Format(format!(
                        "vocabulary entry {} is not a single character: {line:?}",
                        NUM_SPECIALS + i
                    )))
                }
            }
        }
        Vocabulary::from_chars(chars)
    }
}

/// Vocabulary over every character with at least `min_count` occurrences,
/// in order of first appearance.
pub fn build_vocab(lines: &[TextLine], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut first_seen: BTreeMap<usize, char> = BTreeMap::new();
    let mut pos = 0usize;
    for line in lines {
        for &c in &line.chars {
            let n = counts.entry(c).or_insert(0);
            if *n == 0 {
                first_seen.insert(pos, c);
            }
            *n += 1;
            pos += 1;
        }
    }
    let keep = first_seen
        .into_values()
        .filter(|c| counts[c] >= min_count.max(1));
    Vocabulary::from_chars(keep).expect("first-seen order is duplicate free")
}
