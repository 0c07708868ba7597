//! Hypercube data model.
//!
//! A cube is `lines × samples × bands` unsigned 16-bit counts stored in
//! band-interleaved-by-line (BIL) order: for each line, every band holds a
//! contiguous run of `samples` values. This is the native layout of a
//! push-broom camera, where each captured frame is one spatial line across
//! all bands.

mod calibrate;
mod gray;
mod io;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};

pub use calibrate::{flat_field, CalibratedCube, ReferenceFrames};
pub use gray::{project_gray, BandSource, GrayImage};
pub use io::{
    decode_calibrated, decode_payload, encode_payload, load_calibrated, load_cube, parse_header,
    paths_for, save_calibrated, save_cube, CubeHeader, DataType, HEADER_EXTENSION,
    PAYLOAD_EXTENSION, SCALE_KEY,
};

/// Inclusive wavelength range (nm) every cube must fall within.
pub const WAVELENGTH_RANGE_NM: (f64, f64) = (400.0, 1000.0);

/// Header keys written by [`save_cube`]; free-form metadata may not reuse them.
pub(crate) const RESERVED_KEYS: &[&str] = &[
    "description",
    "samples",
    "lines",
    "bands",
    "header offset",
    "file type",
    "data type",
    "interleave",
    "byte order",
    "wavelength units",
    "wavelength",
    "acquisition time",
    "exposure",
];

/// Capture metadata carried alongside the counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CubeMeta {
    pub acquired: Option<DateTime<Utc>>,
    pub exposure: Option<String>,
    extra: BTreeMap<String, String>,
}

impl CubeMeta {
    /// Adds a free-form key/value pair. Keys are normalised to lower case.
    ///
    /// Keys and values must survive a trip through the text header: single
    /// line, no braces, no `=` in the key, and not one of the reserved keys.
    pub fn insert(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        if key.is_empty() || key.contains(['=', '{', '}', '\n', '\r']) {
            return Err(Error::Format(format!(
                "metadata key {key:?} cannot be stored in a header"
            )));
        }
        if RESERVED_KEYS.contains(&key.as_str()) {
            return Err(Error::Format(format!("metadata key {key:?} is reserved")));
        }
        if value.contains(['{', '}', '\n', '\r']) {
            return Err(Error::Format(format!(
                "metadata value {value:?} for {key:?} cannot be stored in a header"
            )));
        }
        self.extra.insert(key, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra
            .get(&key.to_ascii_lowercase())
            .map(String::as_str)
    }

    pub fn extra(&self) -> impl Iterator<Item = (&str, &str)> {
        self.extra.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// A raw hyperspectral frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypercube {
    lines: usize,
    samples: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    data: Vec<u16>,
    pub meta: CubeMeta,
}

impl Hypercube {
    /// Builds a cube from BIL-ordered counts, checking every invariant.
    pub fn new(
        lines: usize,
        samples: usize,
        bands: usize,
        wavelengths: Vec<f64>,
        data: Vec<u16>,
        meta: CubeMeta,
    ) -> Result<Self> {
        if lines == 0 || samples == 0 || bands == 0 {
            return Err(Error::InvalidCube(format!(
                "dimensions must be at least 1 (lines={lines}, samples={samples}, bands={bands})"
            )));
        }
        validate_wavelengths(&wavelengths, bands)?;
        let expected = lines
            .checked_mul(samples)
            .and_then(|n| n.checked_mul(bands))
            .ok_or_else(|| Error::InvalidCube("dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidCube(format!(
                "data length {} does not equal lines*samples*bands = {expected}",
                data.len()
            )));
        }
        Ok(Self {
            lines,
            samples,
            bands,
            wavelengths,
            data,
            meta,
        })
    }

    /// Builds a cube by evaluating `f(line, sample, band)` at every element.
    pub fn from_fn(
        lines: usize,
        samples: usize,
        wavelengths: Vec<f64>,
        mut f: impl FnMut(usize, usize, usize) -> u16,
    ) -> Result<Self> {
        let bands = wavelengths.len();
        let mut data = Vec::with_capacity(lines * samples * bands);
        for line in 0..lines {
            for band in 0..bands {
                for sample in 0..samples {
                    data.push(f(line, sample, band));
                }
            }
        }
        Self::new(
            lines,
            samples,
            bands,
            wavelengths,
            data,
            CubeMeta::default(),
        )
    }

    /// Cube with every element equal to `value`.
    pub fn uniform(
        lines: usize,
        samples: usize,
        wavelengths: Vec<f64>,
        value: u16,
    ) -> Result<Self> {
        Self::from_fn(lines, samples, wavelengths, |_, _, _| value)
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.lines, self.samples, self.bands)
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    /// Counts in BIL order.
    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn index(&self, line: usize, sample: usize, band: usize) -> usize {
        (line * self.bands + band) * self.samples + sample
    }

    #[inline]
    pub fn get(&self, line: usize, sample: usize, band: usize) -> u16 {
        self.data[self.index(line, sample, band)]
    }

    /// Largest count over all bands at one pixel.
    pub fn pixel_max(&self, line: usize, sample: usize) -> u16 {
        (0..self.bands)
            .map(|band| self.get(line, sample, band))
            .max()
            .unwrap_or(0)
    }
}

/// `n` wavelengths evenly spaced over the default sensor range.
pub fn linear_wavelengths(n: usize) -> Vec<f64> {
    let (lo, hi) = WAVELENGTH_RANGE_NM;
    match n {
        0 => Vec::new(),
        1 => vec![(lo + hi) / 2.0],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn validate_wavelengths(wavelengths: &[f64], bands: usize) -> Result<()> {
    if wavelengths.len() != bands {
        return Err(Error::InvalidCube(format!(
            "{} wavelengths given for {bands} bands",
            wavelengths.len()
        )));
    }
    let (lo, hi) = WAVELENGTH_RANGE_NM;
    for w in wavelengths {
        if !w.is_finite() || *w < lo || *w > hi {
            return Err(Error::InvalidCube(format!(
                "wavelength {w} nm outside [{lo}, {hi}] nm"
            )));
        }
    }
    if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidCube(
            "wavelengths must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_data_length() {
        let err = Hypercube::new(2, 3, 1, vec![500.0], vec![0; 5], CubeMeta::default());
        assert!(matches!(err, Err(Error::InvalidCube(_))));
    }

    #[test]
    fn rejects_bad_wavelengths() {
        let meta = CubeMeta::default;
        assert!(Hypercube::new(1, 1, 2, vec![500.0, 500.0], vec![0; 2], meta()).is_err());
        assert!(Hypercube::new(1, 1, 1, vec![350.0], vec![0], meta()).is_err());
        assert!(Hypercube::new(1, 1, 1, vec![f64::NAN], vec![0], meta()).is_err());
        assert!(Hypercube::new(0, 1, 1, vec![500.0], vec![], meta()).is_err());
    }

    #[test]
    fn bil_indexing() {
        let cube = Hypercube::from_fn(2, 3, linear_wavelengths(4), |l, s, b| {
            (l * 100 + s * 10 + b) as u16
        })
        .unwrap();
        assert_eq!(cube.get(1, 2, 3), 123);
        // Line 0, band 1 occupies the second run of `samples` values.
        assert_eq!(&cube.data()[3..6], &[1, 11, 21]);
    }

    #[test]
    fn meta_keys_are_checked() {
        let mut meta = CubeMeta::default();
        assert!(meta.insert("Elapsed Hours", "1.5").is_ok());
        assert_eq!(meta.get("elapsed hours"), Some("1.5"));
        assert!(meta.insert("bands", "3").is_err());
        assert!(meta.insert("a=b", "3").is_err());
        assert!(meta.insert("note", "{x}").is_err());
    }
}
