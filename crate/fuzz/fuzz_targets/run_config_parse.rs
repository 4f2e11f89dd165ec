#![no_main]

use libfuzzer_sys::fuzz_target;
use rawdiff::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(s) {
        // the resolved echo must reproduce the same run
        let echo = cfg.to_toml().expect("valid config serializes");
        assert_eq!(RunConfig::parse(&echo).expect("echo parses"), cfg);
    }
});
