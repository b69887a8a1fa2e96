//! TRJF feature-tensor container decoding must never panic or
//! over-allocate on arbitrary bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wildtraj::features::read_tensors;

fuzz_target!(|data: &[u8]| {
    let _ = read_tensors(&mut &data[..]);
});
