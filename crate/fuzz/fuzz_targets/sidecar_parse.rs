#![no_main]

use libfuzzer_sys::fuzz_target;
use rawdiff::raw::container::RawSidecar;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = RawSidecar::parse(s);
    }
});
