#![no_main]

use libfuzzer_sys::fuzz_target;
use seepage::io::config::{parse_config, parse_config_bytes, to_toml};

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = parse_config_bytes(data) {
        // anything accepted must survive a write and re-read unchanged
        let text = to_toml(&cfg);
        let again = parse_config(&text).expect("echoed config parses");
        assert_eq!(again, cfg);
    }
});
