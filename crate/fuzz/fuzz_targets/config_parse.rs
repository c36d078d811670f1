//! Config text parser must reject arbitrary input with Err, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = mdrlab::config::ExperimentConfig::parse_str(s) {
            // accepted configs must survive a dump/reparse round trip
            let text = cfg.to_text();
            let back = mdrlab::config::ExperimentConfig::parse_str(&text)
                .expect("dump of an accepted config must reparse");
            assert_eq!(cfg, back);
        }
    }
});
