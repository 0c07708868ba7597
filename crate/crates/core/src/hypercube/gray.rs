use super::{CalibratedCube, Hypercube};

/// Anything that can be read band by band at a pixel.
pub trait BandSource {
    fn lines(&self) -> usize;
    fn samples(&self) -> usize;
    fn bands(&self) -> usize;
    /// Value at an element, `None` when the element is invalid.
    fn value(&self, line: usize, sample: usize, band: usize) -> Option<f64>;
}

impl BandSource for Hypercube {
    fn lines(&self) -> usize {
        Hypercube::lines(self)
    }
    fn samples(&self) -> usize {
        Hypercube::samples(self)
    }
    fn bands(&self) -> usize {
        Hypercube::bands(self)
    }
    fn value(&self, line: usize, sample: usize, band: usize) -> Option<f64> {
        Some(f64::from(self.get(line, sample, band)))
    }
}

impl BandSource for CalibratedCube {
    fn lines(&self) -> usize {
        CalibratedCube::lines(self)
    }
    fn samples(&self) -> usize {
        CalibratedCube::samples(self)
    }
    fn bands(&self) -> usize {
        CalibratedCube::bands(self)
    }
    fn value(&self, line: usize, sample: usize, band: usize) -> Option<f64> {
        self.get(line, sample, band)
    }
}

/// Single-channel image, row-major (`y` = line, `x` = sample).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl GrayImage {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        let valid = data.iter().map(|v: &f64| v.is_finite()).collect();
        Self {
            width,
            height,
            data,
            valid,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = y * self.width + x;
        self.valid[i].then(|| self.data[i])
    }

    /// Value with invalid pixels read as 0.
    #[inline]
    pub fn get_or_zero(&self, x: usize, y: usize) -> f64 {
        self.get(x, y).unwrap_or(0.0)
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Copy shifted by `(dx, dy)`; uncovered pixels take `fill`.
    pub fn shifted(&self, dx: isize, dy: isize, fill: f64) -> Self {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            let sx = x as isize - dx;
            let sy = y as isize - dy;
            if sx < 0 || sy < 0 || sx >= self.width as isize || sy >= self.height as isize {
                fill
            } else {
                self.get(sx as usize, sy as usize).unwrap_or(f64::NAN)
            }
        })
    }
}

/// Band-mean projection normalised to `[0, 1]` by min–max over valid pixels.
///
/// Invalid elements are skipped in the mean; a pixel with no valid band is
/// invalid. A constant image maps to 0.5 everywhere.
pub fn project_gray<C: BandSource + ?Sized>(cube: &C) -> GrayImage {
    let (lines, samples, bands) = (cube.lines(), cube.samples(), cube.bands());
    let mut sums = vec![0.0; lines * samples];
    let mut counts = vec![0u32; lines * samples];
    for line in 0..lines {
        for band in 0..bands {
            for sample in 0..samples {
                if let Some(v) = cube.value(line, sample, band) {
                    let i = line * samples + sample;
                    sums[i] += v;
                    counts[i] += 1;
                }
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut data: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            if n == 0 {
                0.0
            } else {
                let mean = s / f64::from(n);
                lo = lo.min(mean);
                hi = hi.max(mean);
                mean
            }
        })
        .collect();
    let valid: Vec<bool> = counts.iter().map(|n| *n > 0).collect();
    let range = hi - lo;
    for (v, ok) in data.iter_mut().zip(&valid) {
        *v = match (*ok, range > 0.0) {
            (false, _) => 0.0,
            (true, true) => ((*v - lo) / range).clamp(0.0, 1.0),
            (true, false) => 0.5,
        };
    }
    GrayImage {
        width: samples,
        height: lines,
        data,
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{flat_field, linear_wavelengths, ReferenceFrames};

    #[test]
    fn reads_outside_the_image_are_invalid() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + y) as f64);
        assert_eq!(img.get(2, 1), Some(3.0));
        assert_eq!(img.get(3, 0), None);
        assert_eq!(img.get(0, 2), None);
        assert!(!img.is_valid(3, 1));
    }

    #[test]
    fn uniform_cube_is_half() {
        let cube = Hypercube::uniform(3, 4, linear_wavelengths(5), 1234).unwrap();
        let g = project_gray(&cube);
        assert_eq!((g.width(), g.height()), (4, 3));
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(g.get(x, y), Some(0.5));
            }
        }
    }

    #[test]
    fn two_level_cube_is_binary() {
        let cube = Hypercube::from_fn(6, 6, linear_wavelengths(3), |l, s, _| {
            if (2..4).contains(&l) && (2..4).contains(&s) {
                200
            } else {
                50
            }
        })
        .unwrap();
        let g = project_gray(&cube);
        assert_eq!(g.get(2, 2), Some(1.0));
        assert_eq!(g.get(0, 0), Some(0.0));
    }

    #[test]
    fn invalid_bands_are_skipped() {
        let wl = linear_wavelengths(2);
        let raw = Hypercube::from_fn(1, 3, wl.clone(), |_, s, b| {
            (100 + 100 * s + 1000 * b) as u16
        })
        .unwrap();
        // Band 1 of sample 2 and both bands of sample 0 have degenerate references.
        let white = Hypercube::from_fn(1, 3, wl.clone(), |_, s, b| {
            if s == 0 || (s == 2 && b == 1) {
                0
            } else {
                10_000
            }
        })
        .unwrap();
        let dark = Hypercube::uniform(1, 3, wl, 0).unwrap();
        let cal = flat_field(&raw, &ReferenceFrames { white, dark }, 1.0).unwrap();
        let g = project_gray(&cal);
        assert_eq!(g.get(0, 0), None);
        // Sample 1 mean = (200 + 1200)/2 / 1e4 = 0.07, sample 2 = 300/1e4 = 0.03.
        assert_eq!(g.get(1, 0), Some(1.0));
        assert_eq!(g.get(2, 0), Some(0.0));
    }
}
