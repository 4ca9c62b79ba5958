#![no_main]

use libfuzzer_sys::fuzz_target;
use oodkit::io::{decode_head, encode_head};

fuzz_target!(|data: &[u8]| {
    if let Ok(head) = decode_head(data) {
        let bytes = encode_head(&head).expect("re-encode");
        assert_eq!(bytes.as_slice(), data);
    }
});
