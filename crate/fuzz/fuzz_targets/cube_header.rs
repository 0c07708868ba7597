//! ENVI header text, a NUL byte, then the payload.
#![no_main]

use hyperchar::hypercube::{decode_calibrated, decode_payload, parse_header, DataType};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(text) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let payload = data.get(split + 1..).unwrap_or(&[]);
    let Ok(header) = parse_header(text) else {
        return;
    };
    match header.data_type {
        DataType::U16 => {
            let offset = header.header_offset;
            if let Ok(cube) = decode_payload(header, payload) {
                assert_eq!(cube.lines() * cube.samples() * cube.bands() * 2 + offset, payload.len());
            }
        }
        DataType::F32 => {
            let _ = decode_calibrated(header, payload);
        }
    }
});
