#![no_main]

use libfuzzer_sys::fuzz_target;
use rawdiff::raw::png_io::{decode_png, encode_png};

fuzz_target!(|data: &[u8]| {
    if let Ok(rgb) = decode_png(data) {
        let back = decode_png(&encode_png(&rgb).expect("decoded PNG re-encodes")).expect("re-encoded PNG decodes");
        assert_eq!(back.planes.data, rgb.planes.data);
    }
});
