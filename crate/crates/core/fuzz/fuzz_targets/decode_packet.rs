#![no_main]

use libfuzzer_sys::fuzz_target;
use volstream::frame::{decode_packet, encode_packet};

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = decode_packet(data) {
        assert_eq!(encode_packet(&p), data);
    }
});
