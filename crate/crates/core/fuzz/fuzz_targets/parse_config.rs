#![no_main]

use libfuzzer_sys::fuzz_target;
use volstream::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ScenarioConfig::parse(text) {
        let _ = cfg.validate();
        assert_eq!(ScenarioConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
});
