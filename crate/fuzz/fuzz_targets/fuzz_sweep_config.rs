#![no_main]

use libfuzzer_sys::fuzz_target;

// Sweep files layer axis definitions over a base config; the parser and the
// axis validation must reject malformed input without panicking.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = kslab::config::SweepConfig::from_toml_str(text);
    }
});
