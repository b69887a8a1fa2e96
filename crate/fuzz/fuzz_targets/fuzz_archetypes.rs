//! Archetype config parsing must never panic on arbitrary text.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wildtraj::synth::parse_archetypes;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_archetypes(text);
    }
});
