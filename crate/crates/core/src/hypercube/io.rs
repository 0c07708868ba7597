//! Text header + raw payload cube files.
//!
//! `<name>.hdr` holds `key = value` lines (values in braces may span lines);
//! `<name>.raw` holds `lines × bands × samples` little-endian u16 values in
//! BIL order. Only `interleave = bil` and `byte order = 0` are accepted.
//! Raw cubes are data type 12 (uint16); calibrated cubes are written as data
//! type 4 (float32) with NaN marking invalid elements.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};

use super::{CalibratedCube, CubeMeta, Hypercube, RESERVED_KEYS};
use crate::error::{Error, Result};

pub const HEADER_EXTENSION: &str = "hdr";
pub const PAYLOAD_EXTENSION: &str = "raw";

/// Header key holding the calibration constant `m` of a float cube.
pub const SCALE_KEY: &str = "calibration scale";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U16,
    F32,
}

impl DataType {
    pub fn code(self) -> usize {
        match self {
            DataType::U16 => 12,
            DataType::F32 => 4,
        }
    }

    pub fn size(self) -> u64 {
        match self {
            DataType::U16 => 2,
            DataType::F32 => 4,
        }
    }
}

/// Parsed header contents before the payload is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeHeader {
    pub lines: usize,
    pub samples: usize,
    pub bands: usize,
    pub header_offset: usize,
    pub data_type: DataType,
    pub wavelengths: Vec<f64>,
    pub meta: CubeMeta,
}

impl CubeHeader {
    /// Payload size implied by the header, in bytes (excluding the offset).
    pub fn payload_bytes(&self) -> Result<u64> {
        (self.lines as u64)
            .checked_mul(self.samples as u64)
            .and_then(|n| n.checked_mul(self.bands as u64))
            .and_then(|n| n.checked_mul(self.data_type.size()))
            .ok_or_else(|| Error::Format("declared dimensions overflow".into()))
    }
}

/// Header and payload paths for a cube given any of `name`, `name.hdr` or
/// `name.raw`.
pub fn paths_for(path: &Path) -> (PathBuf, PathBuf) {
    let has_known_ext = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some(HEADER_EXTENSION) | Some(PAYLOAD_EXTENSION)
    );
    let stem = if has_known_ext {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let mut hdr = stem.clone().into_os_string();
    hdr.push(".");
    hdr.push(HEADER_EXTENSION);
    let mut raw = stem.into_os_string();
    raw.push(".");
    raw.push(PAYLOAD_EXTENSION);
    (hdr.into(), raw.into())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<Hypercube> {
    let (hdr_path, raw_path) = paths_for(path.as_ref());
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header = parse_header(&text)?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    decode_payload(header, &bytes)
}

pub fn save_cube(cube: &Hypercube, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, raw_path) = paths_for(path.as_ref());
    fs::write(&raw_path, encode_payload(cube)).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(&hdr_path, format_header(cube)).map_err(|e| Error::io(&hdr_path, e))?;
    Ok(())
}

pub fn encode_payload(cube: &Hypercube) -> Vec<u8> {
    let mut out = Vec::with_capacity(cube.data().len() * 2);
    for v in cube.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn payload<'a>(header: &CubeHeader, bytes: &'a [u8], want: DataType) -> Result<&'a [u8]> {
    if header.data_type != want {
        return Err(Error::Unsupported(format!(
            "data type {} where {} was expected",
            header.data_type.code(),
            want.code()
        )));
    }
    let expected = header.payload_bytes()?;
    let available = (bytes.len() as u64).saturating_sub(header.header_offset as u64);
    if bytes.len() < header.header_offset || available != expected {
        return Err(Error::PayloadSize {
            expected: expected + header.header_offset as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(&bytes[header.header_offset..])
}

/// Attaches a payload to a parsed header, checking its size first.
pub fn decode_payload(header: CubeHeader, bytes: &[u8]) -> Result<Hypercube> {
    let data = payload(&header, bytes, DataType::U16)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Hypercube::new(
        header.lines,
        header.samples,
        header.bands,
        header.wavelengths,
        data,
        header.meta,
    )
}

/// Attaches a float32 payload to a parsed header.
pub fn decode_calibrated(header: CubeHeader, bytes: &[u8]) -> Result<CalibratedCube> {
    let data = payload(&header, bytes, DataType::F32)?
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let scale = match header.meta.get(SCALE_KEY) {
        Some(v) => v
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("`{SCALE_KEY}` must be a number, got {v:?}")))?,
        None => 1.0,
    };
    CalibratedCube::from_values(
        header.lines,
        header.samples,
        header.bands,
        header.wavelengths,
        data,
        scale,
    )
}

pub fn load_calibrated(path: impl AsRef<Path>) -> Result<CalibratedCube> {
    let (hdr_path, raw_path) = paths_for(path.as_ref());
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header = parse_header(&text)?;
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    decode_calibrated(header, &bytes)
}

/// Writes a calibrated cube as float32; values are rounded to single precision.
pub fn save_calibrated(cube: &CalibratedCube, path: impl AsRef<Path>) -> Result<()> {
    let (hdr_path, raw_path) = paths_for(path.as_ref());
    let mut bytes = Vec::with_capacity(cube.lines() * cube.samples() * cube.bands() * 4);
    for v in cube.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut s = header_prefix(
        cube.lines(),
        cube.samples(),
        cube.bands(),
        DataType::F32,
        cube.wavelengths(),
    );
    let _ = writeln!(s, "{SCALE_KEY} = {:?}", cube.scale());
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(&hdr_path, s).map_err(|e| Error::io(&hdr_path, e))?;
    Ok(())
}

fn header_prefix(
    lines: usize,
    samples: usize,
    bands: usize,
    dt: DataType,
    wavelengths: &[f64],
) -> String {
    let mut s = String::from("ENVI\n");
    s.push_str("description = {hyperchar cube}\n");
    let _ = writeln!(s, "samples = {samples}");
    let _ = writeln!(s, "lines = {lines}");
    let _ = writeln!(s, "bands = {bands}");
    s.push_str("header offset = 0\n");
    s.push_str("file type = ENVI Standard\n");
    let _ = writeln!(s, "data type = {}", dt.code());
    s.push_str("interleave = bil\n");
    s.push_str("byte order = 0\n");
    s.push_str("wavelength units = Nanometers\n");
    let wl: Vec<String> = wavelengths.iter().map(|w| format!("{w:?}")).collect();
    let _ = writeln!(s, "wavelength = {{{}}}", wl.join(", "));
    s
}

fn format_header(cube: &Hypercube) -> String {
    let mut s = header_prefix(
        cube.lines(),
        cube.samples(),
        cube.bands(),
        DataType::U16,
        cube.wavelengths(),
    );
    if let Some(t) = cube.meta.acquired {
        let _ = writeln!(
            s,
            "acquisition time = {}",
            t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
        );
    }
    if let Some(e) = &cube.meta.exposure {
        let _ = writeln!(s, "exposure = {e}");
    }
    for (k, v) in cube.meta.extra() {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// Splits header text into `(key, value)` pairs; brace values may span lines.
fn header_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    if let Some((_, first)) = lines.peek() {
        if first.trim() == "ENVI" {
            lines.next();
        }
    }
    while let Some((lineno, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "header line {}: expected `key = value`",
                lineno + 1
            ))
        })?;
        let key = key.trim().to_ascii_lowercase();
        let mut value = value.trim().to_string();
        if value.starts_with('{') {
            while !value.contains('}') {
                let (_, next) = lines.next().ok_or_else(|| {
                    Error::Format(format!(
                        "header line {}: unterminated brace value",
                        lineno + 1
                    ))
                })?;
                value.push(' ');
                value.push_str(next.trim());
            }
            let close = value.find('}').unwrap_or(value.len());
            if !value[close + 1..].trim().is_empty() {
                return Err(Error::Format(format!(
                    "header line {}: trailing text after closing brace",
                    lineno + 1
                )));
            }
            value = value[1..close].trim().to_string();
        }
        entries.push((key, value));
    }
    Ok(entries)
}

pub fn parse_header(text: &str) -> Result<CubeHeader> {
    let mut lines = None;
    let mut samples = None;
    let mut bands = None;
    let mut data_type = None;
    let mut interleave = None;
    let mut byte_order = None;
    let mut header_offset = 0usize;
    let mut wavelengths = None;
    let mut meta = CubeMeta::default();

    for (key, value) in header_entries(text)? {
        match key.as_str() {
            "samples" => samples = Some(parse_count(&key, &value)?),
            "lines" => lines = Some(parse_count(&key, &value)?),
            "bands" => bands = Some(parse_count(&key, &value)?),
            "header offset" => header_offset = parse_count(&key, &value)?,
            "data type" => data_type = Some(parse_count(&key, &value)?),
            "byte order" => byte_order = Some(parse_count(&key, &value)?),
            "interleave" => interleave = Some(value.to_ascii_lowercase()),
            "wavelength" => {
                let parsed = value
                    .split(',')
                    .map(|v| {
                        v.trim().parse::<f64>().map_err(|_| {
                            Error::Format(format!(
                                "wavelength entry {:?} is not a number",
                                v.trim()
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                wavelengths = Some(parsed);
            }
            "acquisition time" => {
                let t = DateTime::parse_from_rfc3339(&value)
                    .map_err(|e| Error::Format(format!("acquisition time {value:?}: {e}")))?;
                meta.acquired = Some(t.with_timezone(&Utc));
            }
            "exposure" => meta.exposure = Some(value),
            k if RESERVED_KEYS.contains(&k) => {}
            _ => meta.insert(&key, &value)?,
        }
    }

    let require = |v: Option<usize>, name: &str| {
        v.ok_or_else(|| Error::Format(format!("header is missing `{name}`")))
    };
    let lines = require(lines, "lines")?;
    let samples = require(samples, "samples")?;
    let bands = require(bands, "bands")?;
    let data_type = match data_type {
        Some(12) => DataType::U16,
        Some(4) => DataType::F32,
        Some(t) => {
            return Err(Error::Unsupported(format!(
                "data type {t} (only 12 = uint16 or 4 = float32)"
            )))
        }
        None => return Err(Error::Format("header is missing `data type`".into())),
    };
    match interleave.as_deref() {
        Some("bil") => {}
        Some(other) => {
            return Err(Error::Unsupported(format!(
                "interleave {other:?} (only bil)"
            )))
        }
        None => return Err(Error::Format("header is missing `interleave`".into())),
    }
    match byte_order {
        Some(0) | None => {}
        Some(o) => {
            return Err(Error::Unsupported(format!(
                "byte order {o} (only 0 = little-endian)"
            )))
        }
    }
    let wavelengths =
        wavelengths.ok_or_else(|| Error::Format("header is missing `wavelength`".into()))?;
    if wavelengths.len() != bands {
        return Err(Error::Format(format!(
            "header declares {bands} bands but lists {} wavelengths",
            wavelengths.len()
        )));
    }
    Ok(CubeHeader {
        lines,
        samples,
        bands,
        header_offset,
        data_type,
        wavelengths,
        meta,
    })
}

fn parse_count(key: &str, value: &str) -> Result<usize> {
    value.trim().parse::<usize>().map_err(|_| {
        Error::Format(format!(
            "`{key}` must be a non-negative integer, got {value:?}"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::linear_wavelengths;

    fn fixture() -> Hypercube {
        let mut cube = Hypercube::from_fn(2, 3, linear_wavelengths(4), |l, s, b| {
            (l * 1000 + s * 100 + b * 7) as u16
        })
        .unwrap();
        cube.meta.acquired = Some("2024-03-01T12:30:00.25Z".parse().unwrap());
        cube.meta.exposure = Some("8 ms".into());
        cube.meta.insert("elapsed hours", "1.5").unwrap();
        cube
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube");
        let cube = fixture();
        save_cube(&cube, &path).unwrap();
        let back = load_cube(path.with_extension("hdr")).unwrap();
        assert_eq!(back, cube);
        assert_eq!(encode_payload(&back), encode_payload(&cube));
    }

    #[test]
    fn single_value_payload_is_two_le_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cube = Hypercube::uniform(1, 1, vec![550.0], 7).unwrap();
        save_cube(&cube, dir.path().join("one")).unwrap();
        let bytes = fs::read(dir.path().join("one.raw")).unwrap();
        assert_eq!(bytes, vec![0x07, 0x00]);
    }

    #[test]
    fn short_payload_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let cube = Hypercube::uniform(9, 2, vec![500.0], 1).unwrap();
        save_cube(&cube, dir.path().join("c")).unwrap();
        let hdr = fs::read_to_string(dir.path().join("c.hdr")).unwrap();
        fs::write(
            dir.path().join("c.hdr"),
            hdr.replace("lines = 9", "lines = 10"),
        )
        .unwrap();
        match load_cube(dir.path().join("c")) {
            Err(Error::PayloadSize { expected, actual }) => {
                assert_eq!(expected, 40);
                assert_eq!(actual, 36);
            }
            other => panic!("expected payload size error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_layouts() {
        let base = "ENVI\nsamples = 1\nlines = 1\nbands = 1\nwavelength = {500}\n";
        let bsq = format!("{base}data type = 12\ninterleave = bsq\n");
        assert!(matches!(parse_header(&bsq), Err(Error::Unsupported(_))));
        let f64_cube = format!("{base}data type = 5\ninterleave = bil\n");
        assert!(matches!(
            parse_header(&f64_cube),
            Err(Error::Unsupported(_))
        ));
        let f32_cube = parse_header(&format!("{base}data type = 4\ninterleave = bil\n")).unwrap();
        assert!(matches!(
            decode_payload(f32_cube, &[0; 4]),
            Err(Error::Unsupported(_))
        ));
        let be = format!("{base}data type = 12\ninterleave = bil\nbyte order = 1\n");
        assert!(matches!(parse_header(&be), Err(Error::Unsupported(_))));
    }

    #[test]
    fn multiline_wavelengths_and_unknown_keys() {
        let text = "ENVI\nsamples = 2\nlines = 1\nbands = 3\ndata type = 12\n\
                    interleave = BIL\nwavelength = {400.5,\n 500.25,\n 600}\nSensor Type = FX10e\n";
        let h = parse_header(text).unwrap();
        assert_eq!(h.wavelengths, vec![400.5, 500.25, 600.0]);
        assert_eq!(h.meta.get("sensor type"), Some("FX10e"));
        assert_eq!(h.payload_bytes().unwrap(), 12);
    }

    #[test]
    fn malformed_headers_are_errors() {
        assert!(parse_header("ENVI\nsamples 3\n").is_err());
        assert!(parse_header("ENVI\nwavelength = {400, 500\n").is_err());
        assert!(parse_header(
            "samples = 1\nlines = 1\nbands = 1\ndata type = 12\ninterleave = bil\n"
        )
        .is_err());
        let huge = "samples = 18446744073709551615\nlines = 2\nbands = 1\ndata type = 12\n\
                    interleave = bil\nwavelength = {500}\n";
        let h = parse_header(huge).unwrap();
        assert!(decode_payload(h, &[0, 0]).is_err());
    }

    #[test]
    fn calibrated_round_trip_keeps_invalid_elements() {
        let dir = tempfile::tempdir().unwrap();
        let values = vec![0.5, f64::NAN, 0.25, 1.0, 0.125, f64::NAN];
        let cal =
            CalibratedCube::from_values(1, 3, 2, vec![500.0, 600.0], values.clone(), 2.0).unwrap();
        save_calibrated(&cal, dir.path().join("cal")).unwrap();
        let back = load_calibrated(dir.path().join("cal.hdr")).unwrap();
        assert_eq!(back, cal);
        assert_eq!(back.scale(), 2.0);
        assert_eq!(back.valid_count(), 4);
        assert!(load_cube(dir.path().join("cal")).is_err());
    }

    #[test]
    fn paths_accept_any_form() {
        let (h, r) = paths_for(Path::new("/x/frame_001.hdr"));
        assert_eq!(h, PathBuf::from("/x/frame_001.hdr"));
        assert_eq!(r, PathBuf::from("/x/frame_001.raw"));
        let (h, _) = paths_for(Path::new("/x/frame.v2"));
        assert_eq!(h, PathBuf::from("/x/frame.v2.hdr"));
    }
}
