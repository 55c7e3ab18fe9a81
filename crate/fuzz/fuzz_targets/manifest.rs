#![no_main]

use libfuzzer_sys::fuzz_target;
use regada::io::{parse_manifest_records, resolve_samples, Vocabulary};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_manifest_records(text) {
        let vocab = Vocabulary::new(
            vec!["slowly".into(), "quickly".into()],
            vec!["cut".into(), "stir".into()],
            Some(&[(0, 1)]),
        )
        .unwrap();
        let _ = resolve_samples(&records, &vocab, std::path::Path::new("."));
    }
});
