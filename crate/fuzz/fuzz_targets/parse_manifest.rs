#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use oodkit::io::parse_manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = parse_manifest(text, Path::new("base")) {
            let _ = m.group_names();
            for run in &m.runs {
                let _ = run.test_paths().count();
            }
        }
    }
});
