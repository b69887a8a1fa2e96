//! Split-manifest CSV parsing must never panic; accepted manifests must
//! survive a serialize/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wildtraj::split::{manifest_from_csv, manifest_to_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = manifest_from_csv(text) {
        let again = manifest_from_csv(&manifest_to_csv(&manifest)).expect("round trip");
        assert_eq!(manifest.assignments, again.assignments);
    }
});
