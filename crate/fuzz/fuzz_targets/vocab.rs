#![no_main]

use libfuzzer_sys::fuzz_target;
use segmental_lm::corpus::Vocabulary;

fuzz_target!(|text: &str| {
    if let Ok(vocab) = Vocabulary::parse(text) {
        let again = Vocabulary::parse(&vocab.to_file_string()).expect("written vocabulary parses");
        assert_eq!(again, vocab);
    }
});
