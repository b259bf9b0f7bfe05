#![no_main]

use libfuzzer_sys::fuzz_target;
use mimnet::text::Vocabulary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(v) = Vocabulary::parse(text) {
        assert_eq!(Vocabulary::parse(&v.to_text()).expect("written vocabulary parses"), v);
        for id in 2..v.len() {
            assert_eq!(v.id(v.token(id)), id);
        }
    }
});
