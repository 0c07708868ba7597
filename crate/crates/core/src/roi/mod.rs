//! Well detection and per-well pixel masks.

mod hough;
mod tune;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{project_gray, BandSource, GrayImage, Hypercube};

pub use hough::{detect_circles, HoughParams};
pub use tune::{auto_tune, auto_tune_with, TuneGrid};

/// Default saturation level: uint16 full scale.
pub const DEFAULT_SAT_LEVEL: u16 = u16::MAX;

/// A detected well. `cx` runs along samples, `cy` along lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub index: usize,
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    /// Fraction of the circumference supported by edge pixels.
    #[serde(skip)]
    pub support: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            index: 0,
            cx,
            cy,
            r,
            support: 1.0,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }

    pub fn center_distance(&self, other: &Circle) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    /// Pixel indices (`line * width + sample`) whose centres lie inside the circle.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<usize> {
        let x0 = (self.cx - self.r).floor().max(0.0) as usize;
        let y0 = (self.cy - self.r).floor().max(0.0) as usize;
        let x1 = ((self.cx + self.r).ceil().max(0.0) as usize).min(width.saturating_sub(1));
        let y1 = ((self.cy + self.r).ceil().max(0.0) as usize).min(height.saturating_sub(1));
        let mut out = Vec::new();
        if width == 0 || height == 0 {
            return out;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x as f64, y as f64) {
                    out.push(y * width + x);
                }
            }
        }
        out
    }
}

/// Numbered, pairwise non-overlapping wells with optional masks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoiSet {
    pub circles: Vec<Circle>,
    /// Per-circle pixel indices (`line * samples + sample`); empty until
    /// [`build_masks`] runs.
    pub masks: Vec<Vec<usize>>,
    /// Per-circle count of pixels removed for saturation.
    pub excluded: Vec<usize>,
    pub params: Option<HoughParams>,
}

#[derive(Serialize, Deserialize)]
struct CircleRecord {
    index: usize,
    cx: f64,
    cy: f64,
    r: f64,
    excluded: usize,
}

#[derive(Serialize, Deserialize)]
struct RoiSetRecord {
    circles: Vec<CircleRecord>,
    params: Option<HoughParams>,
}

impl RoiSet {
    /// Numbers the circles row-major and checks they do not overlap.
    pub fn from_circles(circles: Vec<Circle>) -> Result<Self> {
        check_non_overlap(&circles)?;
        let circles = number_row_major(circles);
        let n = circles.len();
        Ok(Self {
            circles,
            masks: Vec::new(),
            excluded: vec![0; n],
            params: None,
        })
    }

    pub fn len(&self) -> usize {
        self.circles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circles.is_empty()
    }

    pub fn has_masks(&self) -> bool {
        self.masks.len() == self.circles.len() && !self.circles.is_empty()
    }

    /// A well is usable when its mask kept at least one pixel.
    pub fn is_usable(&self, i: usize) -> bool {
        self.masks.get(i).is_some_and(|m| !m.is_empty())
    }

    pub fn to_json(&self) -> Result<String> {
        let record = RoiSetRecord {
            circles: self
                .circles
                .iter()
                .enumerate()
                .map(|(i, c)| CircleRecord {
                    index: c.index,
                    cx: c.cx,
                    cy: c.cy,
                    r: c.r,
                    excluded: self.excluded.get(i).copied().unwrap_or(0),
                })
                .collect(),
            params: self.params,
        };
        Ok(serde_json::to_string_pretty(&record)?)
    }

    /// Parses the JSON written by [`RoiSet::to_json`]. Masks are not stored
    /// and must be rebuilt with [`build_masks`].
    pub fn from_json(text: &str) -> Result<Self> {
        let record: RoiSetRecord = serde_json::from_str(text)?;
        let mut circles = Vec::with_capacity(record.circles.len());
        let mut excluded = Vec::with_capacity(record.circles.len());
        for (i, c) in record.circles.iter().enumerate() {
            if c.index != i {
                return Err(Error::Format(format!(
                    "circle at position {i} carries index {}; indices must be sequential",
                    c.index
                )));
            }
            if !(c.r > 0.0 && c.r.is_finite() && c.cx.is_finite() && c.cy.is_finite()) {
                return Err(Error::Format(format!("circle {i} has invalid geometry")));
            }
            circles.push(Circle {
                index: c.index,
                cx: c.cx,
                cy: c.cy,
                r: c.r,
                support: 1.0,
            });
            excluded.push(c.excluded);
        }
        check_non_overlap(&circles)?;
        if let Some(p) = &record.params {
            p.validate()?;
        }
        Ok(Self {
            circles,
            masks: Vec::new(),
            excluded,
            params: record.params,
        })
    }
}

fn check_non_overlap(circles: &[Circle]) -> Result<()> {
    for (i, a) in circles.iter().enumerate() {
        if !(a.r > 0.0) {
            return Err(Error::InvalidInput(format!(
                "circle {i} has radius {}",
                a.r
            )));
        }
        for (j, b) in circles.iter().enumerate().skip(i + 1) {
            if a.center_distance(b) < a.r + b.r {
                return Err(Error::InvalidInput(format!("circles {i} and {j} overlap")));
            }
        }
    }
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Sorts circles into rows (a new row starts when the gap in `cy` exceeds
/// the median radius), orders each row by `cx`, and renumbers from 0.
pub(crate) fn number_row_major(mut circles: Vec<Circle>) -> Vec<Circle> {
    if circles.is_empty() {
        return circles;
    }
    let gap = median(&mut circles.iter().map(|c| c.r).collect::<Vec<_>>());
    circles.sort_by(|a, b| a.cy.total_cmp(&b.cy).then(a.cx.total_cmp(&b.cx)));
    let mut rows: Vec<Vec<Circle>> = Vec::new();
    let mut last_cy = f64::NEG_INFINITY;
    for c in circles {
        if rows.is_empty() || c.cy - last_cy > gap {
            rows.push(Vec::new());
        }
        last_cy = c.cy;
        rows.last_mut().expect("row exists").push(c);
    }
    let mut out = Vec::new();
    for mut row in rows {
        row.sort_by(|a, b| a.cx.total_cmp(&b.cx).then(a.cy.total_cmp(&b.cy)));
        out.extend(row);
    }
    for (i, c) in out.iter_mut().enumerate() {
        c.index = i;
    }
    out
}

/// Fills per-well masks: a pixel is kept iff it lies inside the circle and
/// every band is below `sat_level`. Wells whose mask ends up empty are
/// unusable (see [`RoiSet::is_usable`]); this is not an error.
pub fn build_masks(rois: &RoiSet, raw: &Hypercube, sat_level: u16) -> Result<RoiSet> {
    let (lines, samples, _) = raw.shape();
    for c in &rois.circles {
        if c.cx < -0.5 || c.cy < -0.5 || c.cx > samples as f64 - 0.5 || c.cy > lines as f64 - 0.5 {
            return Err(Error::InvalidInput(format!(
                "circle {} centre ({:.1}, {:.1}) lies outside the {samples}x{lines} frame",
                c.index, c.cx, c.cy
            )));
        }
    }
    let mut out = rois.clone();
    out.masks.clear();
    out.excluded.clear();
    for c in &rois.circles {
        let mut mask = Vec::new();
        let mut excluded = 0;
        for p in c.pixels(samples, lines) {
            let (line, sample) = (p / samples, p % samples);
            if raw.pixel_max(line, sample) < sat_level {
                mask.push(p);
            } else {
                excluded += 1;
            }
        }
        if mask.is_empty() {
            log::warn!("well {} has no unsaturated pixels and is unusable", c.index);
        }
        out.masks.push(mask);
        out.excluded.push(excluded);
    }
    Ok(out)
}

struct Unsaturated<'a, C: ?Sized> {
    cube: &'a C,
    raw: &'a Hypercube,
    sat_level: u16,
}

impl<C: BandSource + ?Sized> BandSource for Unsaturated<'_, C> {
    fn lines(&self) -> usize {
        self.cube.lines()
    }
    fn samples(&self) -> usize {
        self.cube.samples()
    }
    fn bands(&self) -> usize {
        self.cube.bands()
    }
    fn value(&self, line: usize, sample: usize, band: usize) -> Option<f64> {
        if self.raw.pixel_max(line, sample) >= self.sat_level {
            None
        } else {
            self.cube.value(line, sample, band)
        }
    }
}

/// Grayscale image for circle detection in which saturated pixels are
/// invalid, so glare neither stretches the contrast nor produces edges.
pub fn detection_image<C: BandSource + ?Sized>(
    cube: &C,
    raw: &Hypercube,
    sat_level: u16,
) -> Result<GrayImage> {
    if (cube.lines(), cube.samples()) != (raw.lines(), raw.samples()) {
        return Err(Error::Dimension(format!(
            "cube is {}x{} but the raw frame is {}x{}",
            cube.lines(),
            cube.samples(),
            raw.lines(),
            raw.samples()
        )));
    }
    Ok(project_gray(&Unsaturated {
        cube,
        raw,
        sat_level,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::linear_wavelengths;
    use proptest::prelude::*;

    #[test]
    fn row_major_numbering() {
        let mut cs = Vec::new();
        for (row, y) in [20.0, 61.0, 99.0].iter().enumerate() {
            for col in (0..4).rev() {
                // Small jitter in cy within a row must not split it.
                let jitter = if col % 2 == 0 { 1.5 } else { -1.5 };
                cs.push(Circle::new(
                    20.0 + 40.0 * col as f64,
                    y + jitter + row as f64,
                    10.0,
                ));
            }
        }
        let set = RoiSet::from_circles(cs).unwrap();
        for (i, c) in set.circles.iter().enumerate() {
            assert_eq!(c.index, i);
            assert_eq!(((c.cx - 20.0) / 40.0).round() as usize, i % 4);
        }
    }

    #[test]
    fn overlapping_circles_rejected() {
        let cs = vec![Circle::new(10.0, 10.0, 5.0), Circle::new(18.0, 10.0, 5.0)];
        assert!(RoiSet::from_circles(cs).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut set = RoiSet::from_circles(vec![
            Circle::new(10.0, 10.0, 5.0),
            Circle::new(30.5, 10.0, 5.0),
        ])
        .unwrap();
        set.excluded = vec![3, 0];
        set.params = Some(HoughParams::default());
        let json = set.to_json().unwrap();
        assert!(json.contains("\"excluded\": 3"));
        let back = RoiSet::from_json(&json).unwrap();
        assert_eq!(back.circles, set.circles);
        assert_eq!(back.excluded, set.excluded);
        assert!(RoiSet::from_json(
            "{\"circles\":[{\"index\":1,\"cx\":1,\"cy\":1,\"r\":1,\"excluded\":0}]}"
        )
        .is_err());
        assert!(RoiSet::from_json("[]").is_err());
    }

    fn frame_with_hot_pixel() -> Hypercube {
        Hypercube::from_fn(20, 20, linear_wavelengths(3), |l, s, b| {
            if l == 10 && s == 12 && b == 2 {
                u16::MAX
            } else {
                1000
            }
        })
        .unwrap()
    }

    #[test]
    fn masks_exclude_saturation_at_any_band() {
        let set = RoiSet::from_circles(vec![Circle::new(10.0, 10.0, 3.0)]).unwrap();
        let raw = frame_with_hot_pixel();
        let full = Circle::new(10.0, 10.0, 3.0).pixels(20, 20).len();
        assert_eq!(full, 29);
        let m = build_masks(&set, &raw, DEFAULT_SAT_LEVEL).unwrap();
        assert_eq!(m.excluded, vec![1]);
        assert_eq!(m.masks[0].len(), full - 1);
        assert!(!m.masks[0].contains(&(10 * 20 + 12)));
        assert!(m.is_usable(0));

        let clean = Hypercube::uniform(20, 20, linear_wavelengths(3), 1000).unwrap();
        let none = build_masks(&set, &clean, DEFAULT_SAT_LEVEL).unwrap();
        assert_eq!(none.excluded, vec![0]);
        assert_eq!(none.masks[0].len(), full);

        let all = build_masks(&set, &raw, 0).unwrap();
        assert!(!all.is_usable(0));
        assert_eq!(all.excluded, vec![full]);
    }

    #[test]
    fn masks_reject_circles_outside_frame() {
        let set = RoiSet::from_circles(vec![Circle::new(40.0, 10.0, 3.0)]).unwrap();
        assert!(build_masks(&set, &frame_with_hot_pixel(), DEFAULT_SAT_LEVEL).is_err());
    }

    proptest! {
        #[test]
        fn accepted_sets_never_overlap(raw in prop::collection::vec((0.0f64..200.0, 0.0f64..200.0, 1.0f64..20.0), 0..30)) {
            // Greedy acceptance, as detection does.
            let mut kept: Vec<Circle> = Vec::new();
            for (x, y, r) in raw {
                let c = Circle::new(x, y, r);
                if kept.iter().all(|k| k.center_distance(&c) >= k.r + c.r) {
                    kept.push(c);
                }
            }
            let set = RoiSet::from_circles(kept).unwrap();
            for (i, a) in set.circles.iter().enumerate() {
                prop_assert_eq!(a.index, i);
                for b in &set.circles[i + 1..] {
                    prop_assert!(a.center_distance(b) >= a.r + b.r);
                }
            }
        }

        #[test]
        fn mask_is_inside_disk_and_unsaturated(cx in 3.0f64..17.0, cy in 3.0f64..17.0, r in 0.5f64..6.0, sat in 500u16..3000) {
            let raw = Hypercube::from_fn(20, 20, linear_wavelengths(2), |l, s, b| ((l * 37 + s * 91 + b * 13) % 2500) as u16).unwrap();
            let set = RoiSet::from_circles(vec![Circle::new(cx, cy, r)]).unwrap();
            let m = build_masks(&set, &raw, sat).unwrap();
            for &p in &m.masks[0] {
                let (y, x) = (p / 20, p % 20);
                prop_assert!(set.circles[0].contains(x as f64, y as f64));
                prop_assert!(raw.pixel_max(y, x) < sat);
            }
            prop_assert_eq!(m.masks[0].len() + m.excluded[0], set.circles[0].pixels(20, 20).len());
        }
    }
}
