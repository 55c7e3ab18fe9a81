#![no_main]

use libfuzzer_sys::fuzz_target;
use regada::io::SplitFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = SplitFile::parse(text) {
        assert_eq!(SplitFile::parse(&s.to_json()).unwrap(), s);
    }
});
