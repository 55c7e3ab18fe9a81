#![no_main]

use libfuzzer_sys::fuzz_target;
use regada::config::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = TrainConfig::parse(text) {
        let back = TrainConfig::parse(&c.to_json_pretty()).unwrap();
        assert_eq!(back.hash(), c.hash());
    }
});
