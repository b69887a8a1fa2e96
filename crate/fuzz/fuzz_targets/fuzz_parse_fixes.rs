//! CSV telemetry ingest must never panic on arbitrary bytes: malformed
//! rows are rejected row-by-row, structural problems surface as errors.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wildtraj::ingest::{parse_fixes, ColumnMap};

fuzz_target!(|data: &[u8]| {
    let _ = parse_fixes(data, &ColumnMap::default());
});
