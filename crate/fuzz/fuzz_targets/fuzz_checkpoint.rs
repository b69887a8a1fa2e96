//! TRJM checkpoint decoding must never panic or over-allocate on
//! arbitrary bytes; truncation, bad magic, and shape mismatches must all
//! come back as errors.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wildtraj::models::load_checkpoint;

fuzz_target!(|data: &[u8]| {
    let _ = load_checkpoint(&mut &data[..]);
});
