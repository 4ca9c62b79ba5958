#![no_main]

use libfuzzer_sys::fuzz_target;
use oodkit::io::{decode_dump, encode_dump};

fuzz_target!(|data: &[u8]| {
    if let Ok(dump) = decode_dump(data) {
        // anything accepted must re-encode to an equal dump
        let bytes = encode_dump(&dump.features, dump.aug.as_ref()).expect("re-encode");
        let again = decode_dump(&bytes).expect("decode re-encoded");
        assert_eq!(again.features, dump.features);
    }
});
