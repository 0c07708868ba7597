#![no_main]

use hyperchar::series::SeriesStore;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(store) = SeriesStore::parse_csv(text) {
        let again = SeriesStore::parse_csv(&store.to_csv_string().unwrap()).unwrap();
        assert_eq!(store.len(), again.len());
    }
});
