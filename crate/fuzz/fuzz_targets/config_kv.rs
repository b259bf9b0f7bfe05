#![no_main]

use libfuzzer_sys::fuzz_target;
use mimnet::config::parse_kv;
use mimnet::TrainingConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_kv(text);
    if let Ok(cfg) = TrainingConfig::from_text(text) {
        let again = TrainingConfig::from_text(&cfg.to_text()).expect("written config parses");
        assert_eq!(again.to_text(), cfg.to_text());
    }
});
