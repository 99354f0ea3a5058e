#![no_main]

use dart_arena::trace::{parse_jsonl, render};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(steps) = parse_jsonl(text) {
            let _ = render(&steps);
        }
    }
});
