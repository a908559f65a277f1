#![no_main]

use libfuzzer_sys::fuzz_target;

// Parsing arbitrary text into a run configuration must return an error for
// malformed input, never panic or hang.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = kslab::config::RunConfig::from_toml_str(text);
    }
});
