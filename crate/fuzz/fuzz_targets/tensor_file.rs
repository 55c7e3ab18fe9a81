#![no_main]

use libfuzzer_sys::fuzz_target;
use regada::io::tensor_file::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode(data) {
        // decoding is lossless, so re-encoding gives back the input
        assert_eq!(encode(&t), data);
        let _ = t.to_tensor();
    }
});
