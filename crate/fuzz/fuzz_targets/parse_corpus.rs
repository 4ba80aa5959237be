#![no_main]

use libfuzzer_sys::fuzz_target;
use segmental_lm::corpus::{parse_corpus, parse_line};

fuzz_target!(|text: &str| {
    for has_gold in [false, true] {
        let corpus = parse_corpus(text, has_gold);
        for line in &corpus.lines {
            if let Some(b) = &line.boundaries {
                assert!(b.windows(2).all(|w| w[0] < w[1]));
                assert!(b.iter().all(|&i| i > 0 && i < line.chars.len()));
            }
        }
    }
    // a gold line survives rendering and reparsing
    if let Some(line) = parse_line(text, true) {
        if !line.chars.iter().any(|c| *c == '\r' || *c == '\n') {
            assert_eq!(parse_line(&line.to_gold_string(), true), Some(line));
        }
    }
});
