//! Parameter auto-tuning against an expected well count.
//!
//! The sweep lowers the coverage threshold and widens the radius window
//! step by step until detection returns exactly the expected number of
//! non-overlapping circles. It needs initial radii in the right range
//! (within about ±50% of the truth).

use super::{detect_circles, HoughParams, RoiSet};
use crate::error::{Error, Result};
use crate::hypercube::GrayImage;

/// The bounded grid explored by [`auto_tune`].
#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    /// Multipliers applied to the initial coverage threshold, tried in order.
    pub threshold_factors: Vec<f64>,
    /// Radius window expansions `e`: `[r_min / e, r_max · e]`, tried in order.
    pub window_expansions: Vec<f64>,
    /// Floor under the swept threshold.
    pub min_threshold: f64,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            threshold_factors: vec![1.0, 0.9, 0.8, 0.7],
            window_expansions: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            min_threshold: 0.45,
        }
    }
}

pub fn auto_tune(
    img: &GrayImage,
    expected: usize,
    init: &HoughParams,
) -> Result<(RoiSet, HoughParams)> {
    auto_tune_with(img, expected, init, &TuneGrid::default())
}

pub fn auto_tune_with(
    img: &GrayImage,
    expected: usize,
    init: &HoughParams,
    grid: &TuneGrid,
) -> Result<(RoiSet, HoughParams)> {
    if expected == 0 {
        return Err(Error::InvalidInput(
            "expected well count must be at least 1".into(),
        ));
    }
    init.validate()?;
    let max_r = 0.5 * img.width().min(img.height()) as f64;
    // Relaxation levels: at each level the wider windows are tried first, so
    // a window that is merely too narrow is fixed before the threshold drops.
    let mut order = Vec::new();
    let (ne, nt) = (grid.window_expansions.len(), grid.threshold_factors.len());
    for level in 0..ne + nt {
        for ei in (0..ne).rev() {
            if level >= ei && level - ei < nt {
                order.push((
                    grid.window_expansions[ei],
                    grid.threshold_factors[level - ei],
                ));
            }
        }
    }
    let mut best = 0usize;
    for (e, f) in order {
        let r_max = (init.r_max * e).min(max_r);
        let r_min = (init.r_min / e).max(1.0).min(r_max);
        {
            let p = HoughParams {
                r_min,
                r_max,
                accumulator_threshold: (init.accumulator_threshold * f)
                    .max(grid.min_threshold)
                    .min(1.0),
                ..*init
            };
            let set = detect_circles(img, &p)?;
            let n = set.len();
            if n == expected {
                return Ok((set, p));
            }
            if n.abs_diff(expected) < best.abs_diff(expected)
                || (n.abs_diff(expected) == best.abs_diff(expected) && n > best)
            {
                best = n;
            }
        }
    }
    Err(Error::TuningFailed { expected, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_image(rows: usize, cols: usize, r: f64, pitch: f64) -> GrayImage {
        let w = (pitch * cols as f64 + pitch) as usize;
        let h = (pitch * rows as f64 + pitch) as usize;
        GrayImage::from_fn(w, h, |x, y| {
            for i in 0..rows {
                for j in 0..cols {
                    let cx = pitch * (j as f64 + 1.0);
                    let cy = pitch * (i as f64 + 1.0);
                    if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                        return 0.9;
                    }
                }
            }
            0.1
        })
    }

    #[test]
    fn expands_window_when_radii_are_off() {
        let img = grid_image(2, 3, 20.0, 55.0);
        // Initial window sits 40% below the true radius.
        let init = HoughParams {
            r_min: 12.0,
            r_max: 12.0,
            ..HoughParams::default()
        };
        let direct = detect_circles(&img, &init).unwrap();
        assert_ne!(direct.len(), 6);
        let (set, p) = auto_tune(&img, 6, &init).unwrap();
        assert_eq!(set.len(), 6);
        assert!(p.r_max >= 20.0, "{p:?} {:?}", set.circles);
    }

    #[test]
    fn impossible_count_reports_best() {
        let img = grid_image(2, 3, 15.0, 50.0);
        let init = HoughParams {
            r_min: 10.0,
            r_max: 20.0,
            ..HoughParams::default()
        };
        match auto_tune(&img, 7, &init) {
            Err(Error::TuningFailed {
                expected: 7,
                best: 6,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(auto_tune(&img, 0, &init).is_err());
    }
}
