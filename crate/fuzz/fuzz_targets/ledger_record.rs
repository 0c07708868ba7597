#![no_main]

use hyperchar::station::Record;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for line in data.split(|&b| b == b'\n') {
        if let Ok(r) = serde_json::from_slice::<Record>(line) {
            let text = serde_json::to_string(&r).unwrap();
            serde_json::from_str::<Record>(&text).unwrap();
        }
    }
});
