#![no_main]

use libfuzzer_sys::fuzz_target;
use segmental_lm::training::TrainConfig;

fuzz_target!(|text: &str| {
    // the first line doubles as a single override
    let (overrides, body) = match text.split_once('\n') {
        Some((first, rest)) => (vec![first.to_string()], rest),
        None => (Vec::new(), text),
    };
    if let Ok(cfg) = TrainConfig::from_toml(body, &overrides) {
        let again = TrainConfig::from_toml(&cfg.to_toml(), &[]).expect("resolved config reparses");
        assert_eq!(again, cfg);
    }
});
