#![no_main]

use libfuzzer_sys::fuzz_target;

// Snapshot decoding reads a JSON header line plus a binary payload. A lying
// header must not trigger huge allocations, panics, or out-of-bounds reads.
fuzz_target!(|data: &[u8]| {
    let _ = kslab::snapshot::decode_bytes(data);
});
