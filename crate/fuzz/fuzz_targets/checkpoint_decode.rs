#![no_main]

use dart_arena::nn::{Checkpoint, PolicyNet};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // A decoded checkpoint must re-encode to bytes that decode to itself.
        let again = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.params, ck.params);
        if let Ok(net) = PolicyNet::new(ck.spec.clone()) {
            let _ = net.check_params(&ck.params);
        }
    }
});
