#![no_main]

use libfuzzer_sys::fuzz_target;
use segmental_lm::training::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let again = Checkpoint::decode(&ckpt.encode()).expect("encoded checkpoint decodes");
        assert_eq!(again, ckpt);
    }
});
