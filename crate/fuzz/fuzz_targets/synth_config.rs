#![no_main]

use libfuzzer_sys::fuzz_target;
use regada::synth::SynthConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = serde_json::from_slice::<SynthConfig>(data) {
        let _ = c.validate();
    }
});
