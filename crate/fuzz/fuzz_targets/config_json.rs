#![no_main]

use dart_arena::config::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = Config::parse(text) {
            assert_eq!(Config::parse(&cfg.to_json()).expect("round trip"), cfg);
        }
    }
});
