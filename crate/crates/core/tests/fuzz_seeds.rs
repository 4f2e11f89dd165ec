//! The fuzz corpus seeds must stay valid inputs: a format change that
//! orphans them would leave the fuzzers starting from nothing.

use std::fs;
use std::path::{Path, PathBuf};

use rawdiff::checkpoint::{decode_checkpoint, encode_checkpoint};
use rawdiff::config::RunConfig;
use rawdiff::raw::container::{decode_raw, encode_raw, RawSidecar};
use rawdiff::raw::png_io::{decode_png, encode_png};
use rawdiff::raw::DatasetManifest;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut v: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    assert!(!v.is_empty(), "no seeds for {target}");
    v.sort();
    v
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn binary_seeds_decode_and_reencode_identically() {
    for (p, b) in seeds("rawd_decode") {
        let raw = decode_raw(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(encode_raw(&raw).unwrap(), b);
    }
    for (p, b) in seeds("checkpoint_decode") {
        let ck = decode_checkpoint(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(encode_checkpoint(&ck).unwrap(), b);
    }
    for (p, b) in seeds("png_decode") {
        let rgb = decode_png(&b).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(decode_png(&encode_png(&rgb).unwrap()).unwrap().planes.data, rgb.planes.data);
    }
}

#[test]
fn text_seeds_parse() {
    for (p, b) in seeds("sidecar_parse") {
        RawSidecar::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("manifest_parse") {
        DatasetManifest::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, b) in seeds("run_config_parse") {
        let cfg = RunConfig::parse(text(&b)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
