#![no_main]

use libfuzzer_sys::fuzz_target;
use rawdiff::raw::container::{decode_raw, encode_raw};

fuzz_target!(|data: &[u8]| {
    if let Ok(raw) = decode_raw(data) {
        // whatever decodes must survive a re-encode unchanged
        let once = encode_raw(&raw).expect("decoded RAW re-encodes");
        let twice = encode_raw(&decode_raw(&once).expect("re-encoded RAW decodes")).unwrap();
        assert_eq!(once, twice);
    }
});
