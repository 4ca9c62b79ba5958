#![no_main]

use libfuzzer_sys::fuzz_target;
use oodkit::MethodConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = MethodConfig::parse(text) {
            let shown = cfg.to_string();
            assert_eq!(MethodConfig::parse(&shown).expect("display parses"), cfg);
        }
    }
});
