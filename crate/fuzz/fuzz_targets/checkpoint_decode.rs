#![no_main]

use libfuzzer_sys::fuzz_target;
use rawdiff::checkpoint::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode_checkpoint(data) {
        // compare bytes, not values: NaN payloads are legal tensor data
        let once = encode_checkpoint(&ck).expect("decoded checkpoint re-encodes");
        let twice = encode_checkpoint(&decode_checkpoint(&once).expect("re-encoded checkpoint decodes")).unwrap();
        assert_eq!(once, twice);
    }
});
