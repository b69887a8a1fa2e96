//! Run-configuration key=value parsing must never panic, and any config it
//! accepts must echo back to text it can parse again.

#![no_main]

use libfuzzer_sys::fuzz_target;
use wildtraj::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_text(text) {
        let echoed = RunConfig::from_text(&cfg.echo()).expect("echo must re-parse");
        assert_eq!(cfg, echoed);
    }
});
