#![no_main]

use libfuzzer_sys::fuzz_target;
use rawdiff::raw::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = DatasetManifest::parse(s) {
            let _ = m.require_pairs();
        }
    }
});
