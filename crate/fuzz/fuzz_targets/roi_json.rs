#![no_main]

use hyperchar::roi::RoiSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(set) = RoiSet::from_json(text) {
        let again = RoiSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(set.len(), again.len());
    }
});
