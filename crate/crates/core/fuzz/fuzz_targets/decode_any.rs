#![no_main]

use libfuzzer_sys::fuzz_target;
use volstream::frame::Packet;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = Packet::decode(data) {
        assert_eq!(Packet::decode(&p.encode()).unwrap(), p);
    }
});
