#![no_main]

use libfuzzer_sys::fuzz_target;
use oodkit::io::{decode_stats, encode_stats};

fuzz_target!(|data: &[u8]| {
    if let Ok(stats) = decode_stats(data) {
        let bytes = encode_stats(&stats).expect("re-encode");
        assert_eq!(decode_stats(&bytes).expect("decode re-encoded"), stats);
    }
});
