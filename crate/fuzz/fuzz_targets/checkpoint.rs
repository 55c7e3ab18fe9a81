#![no_main]

use libfuzzer_sys::fuzz_target;
use regada::io::RawCheckpoint;
use regada::train::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(raw) = RawCheckpoint::decode(data) {
        assert_eq!(raw.encode(), data);
        let _ = Checkpoint::from_raw(&raw);
    }
});
