#![no_main]

use libfuzzer_sys::fuzz_target;
use oodkit::io::dump::decode_header;
use oodkit::io::Sidecar;

// input: u16 little-endian split point, then sidecar JSON, then dump bytes
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let split = (u16::from_le_bytes([data[0], data[1]]) as usize).min(data.len() - 2);
    let (json, dump) = data[2..].split_at(split);
    if let Ok(side) = serde_json::from_slice::<Sidecar>(json) {
        if let Ok(header) = decode_header(dump) {
            let _ = side.verify(&header, dump);
        }
    }
});
