#![no_main]

use libfuzzer_sys::fuzz_target;
use segmental_lm::corpus::parse_embeddings;

fuzz_target!(|text: &str| {
    if let Ok(m) = parse_embeddings(text) {
        assert!(m.iter().all(|v| v.is_finite()));
    }
});
