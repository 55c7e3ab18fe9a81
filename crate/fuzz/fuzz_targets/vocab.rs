#![no_main]

use libfuzzer_sys::fuzz_target;
use regada::io::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = Vocabulary::parse(text) {
        for a in 0..v.num_adverbs() {
            if let Some(b) = v.antonym(a) {
                assert_eq!(v.antonym(b), Some(a));
            }
        }
        let again = reparse(&v);
        assert_eq!(again.adverbs(), v.adverbs());
    }
});

fn reparse(v: &Vocabulary) -> Vocabulary {
    Vocabulary::from_file_repr(v.to_file_repr()).unwrap()
}
