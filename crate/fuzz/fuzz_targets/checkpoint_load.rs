//! Checkpoint decoder must reject arbitrary input with Err, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(mut net) = mdrlab::agent::ActorCritic::from_checkpoint_str(s) {
            // any accepted checkpoint must be saveable again
            let text = net.to_checkpoint_string().expect("accepted net must re-serialize");
            mdrlab::agent::ActorCritic::from_checkpoint_str(&text).expect("round trip");
            let _ = net.mode();
        }
    }
});
