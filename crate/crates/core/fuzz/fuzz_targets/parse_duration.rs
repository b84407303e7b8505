#![no_main]

use libfuzzer_sys::fuzz_target;
use volstream::app::DurationDist;
use volstream::time::{format_duration, parse_duration, parse_ms};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ns) = parse_duration(text) {
        assert_eq!(parse_duration(&format_duration(ns)).unwrap(), ns);
    }
    let _ = parse_ms(text);
    if let Ok(d) = text.parse::<DurationDist>() {
        assert_eq!(d.to_string().parse::<DurationDist>().unwrap(), d);
    }
});
