#![no_main]

use hyperchar::station::StationConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = StationConfig::from_toml(text) {
        StationConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    }
});
