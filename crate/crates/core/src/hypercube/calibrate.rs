use super::Hypercube;
use crate::error::{Error, Result};

/// White (high-reflectance tile) and dark (shutter closed) references.
///
/// Each reference either matches the target cube's shape or is a single
/// line, which is replicated along lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrames {
    pub white: Hypercube,
    pub dark: Hypercube,
}

/// Reflectance cube produced by [`flat_field`], same BIL layout as the raw
/// cube, with a per-element validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedCube {
    lines: usize,
    samples: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    data: Vec<f64>,
    valid: Vec<bool>,
    scale: f64,
}

impl CalibratedCube {
    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    /// The scaling constant `m` used during calibration.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn index(&self, line: usize, sample: usize, band: usize) -> usize {
        (line * self.bands + band) * self.samples + sample
    }

    /// Reflectance at one element, `None` where calibration is undefined.
    #[inline]
    pub fn get(&self, line: usize, sample: usize, band: usize) -> Option<f64> {
        let i = self.index(line, sample, band);
        self.valid[i].then(|| self.data[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Elements in BIL order, NaN where invalid.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .zip(&self.valid)
            .map(|(v, ok)| if *ok { *v } else { f64::NAN })
    }

    /// Rebuilds a cube from BIL values; non-finite values are invalid.
    pub fn from_values(
        lines: usize,
        samples: usize,
        bands: usize,
        wavelengths: Vec<f64>,
        values: Vec<f64>,
        scale: f64,
    ) -> Result<Self> {
        let n = lines
            .checked_mul(samples)
            .and_then(|n| n.checked_mul(bands))
            .ok_or_else(|| Error::InvalidCube("dimensions overflow".into()))?;
        if n == 0 {
            return Err(Error::InvalidCube("cube has a zero dimension".into()));
        }
        if values.len() != n {
            return Err(Error::InvalidCube(format!(
                "expected {n} values, got {}",
                values.len()
            )));
        }
        if wavelengths.len() != bands {
            return Err(Error::InvalidCube(format!(
                "{bands} bands but {} wavelengths",
                wavelengths.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidCube(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite()).collect();
        let data = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        Ok(Self {
            lines,
            samples,
            bands,
            wavelengths,
            data,
            valid,
            scale,
        })
    }
}

fn reference_line(reference: &Hypercube, line: usize) -> usize {
    if reference.lines() == 1 {
        0
    } else {
        line
    }
}

fn check_reference(name: &str, raw: &Hypercube, reference: &Hypercube) -> Result<()> {
    if reference.samples() != raw.samples() || reference.bands() != raw.bands() {
        return Err(Error::Dimension(format!(
            "{name} reference is {}x{}x{} but raw cube is {}x{}x{}",
            reference.lines(),
            reference.samples(),
            reference.bands(),
            raw.lines(),
            raw.samples(),
            raw.bands()
        )));
    }
    if reference.lines() != raw.lines() && reference.lines() != 1 {
        return Err(Error::Dimension(format!(
            "{name} reference has {} lines; expected {} or 1",
            reference.lines(),
            raw.lines()
        )));
    }
    Ok(())
}

/// Flat-field correction `C = (R − D) / (W − D) · m`.
///
/// Elements where `W ≤ D` have no defined reflectance and are flagged
/// invalid instead of producing NaN or infinity.
pub fn flat_field(raw: &Hypercube, refs: &ReferenceFrames, m: f64) -> Result<CalibratedCube> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scaling constant m must be positive, got {m}"
        )));
    }
    check_reference("white", raw, &refs.white)?;
    check_reference("dark", raw, &refs.dark)?;

    let (lines, samples, bands) = raw.shape();
    let mut data = vec![0.0; raw.data().len()];
    let mut valid = vec![false; raw.data().len()];
    for line in 0..lines {
        let wl = reference_line(&refs.white, line);
        let dl = reference_line(&refs.dark, line);
        for band in 0..bands {
            for sample in 0..samples {
                let w = f64::from(refs.white.get(wl, sample, band));
                let d = f64::from(refs.dark.get(dl, sample, band));
                if w <= d {
                    continue;
                }
                let i = raw.index(line, sample, band);
                data[i] = (f64::from(raw.data()[i]) - d) / (w - d) * m;
                valid[i] = true;
            }
        }
    }
    if !valid.iter().any(|v| *v) {
        return Err(Error::DegenerateReference);
    }
    Ok(CalibratedCube {
        lines,
        samples,
        bands,
        wavelengths: raw.wavelengths().to_vec(),
        data,
        valid,
        scale: m,
    })
}
