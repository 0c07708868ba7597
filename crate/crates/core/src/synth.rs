//! Seeded ground-truth scenes: well plates imaged under known kinetics.
//!
//! A scene's well models describe the band-summed reflectance `I(t)`; each
//! band of a well pixel carries `I(t)/bands`, so the intensity extracted by
//! [`crate::series::extract_intensity`] is `I(t)` itself. Reflectance 1.0
//! maps to the white-reference level (60% of full scale by default), so
//! the glare ring saturates the sensor while signal pixels never do.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::{linear_wavelengths, Hypercube, ReferenceFrames};
use crate::models::{ExpParams, ModelParams};
use crate::roi::Circle;
use crate::series::IntensitySeries;

/// Full-scale sensor value; glare is painted at this level.
pub const SATURATED: u16 = u16::MAX;

/// Regular grid of circular wells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateLayout {
    pub rows: usize,
    pub cols: usize,
    /// Well radius, pixels.
    pub radius: f64,
    /// Centre-to-centre spacing, pixels.
    pub pitch: f64,
    /// Centre of the top-left well as `[x, y]`; the plate is centred when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 2]>,
}

impl PlateLayout {
    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// Well circles in row-major order.
    pub fn circles(&self, lines: usize, samples: usize) -> Vec<Circle> {
        let [x0, y0] = self.origin.unwrap_or([
            (samples as f64 - 1.0) / 2.0 - (self.cols as f64 - 1.0) * self.pitch / 2.0,
            (lines as f64 - 1.0) / 2.0 - (self.rows as f64 - 1.0) * self.pitch / 2.0,
        ]);
        let mut out = Vec::with_capacity(self.count());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let mut circle = Circle::new(
                    x0 + c as f64 * self.pitch,
                    y0 + r as f64 * self.pitch,
                    self.radius,
                );
                circle.index = out.len();
                out.push(circle);
            }
        }
        out
    }
}

/// Reflective-mask glare: an annulus per well, centred `offset` pixels away
/// from the well centre, between radii `r + gap` and `r + gap + width`.
/// An offset larger than `gap` makes the annulus cut into the well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlareRing {
    pub offset: [f64; 2],
    pub gap: f64,
    pub width: f64,
}

impl Default for GlareRing {
    fn default() -> Self {
        Self {
            offset: [3.0, -2.0],
            gap: 1.0,
            width: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub lines: usize,
    pub samples: usize,
    pub bands: usize,
    pub layout: PlateLayout,
    /// One model per well (row-major), or a single model shared by all wells.
    pub wells: Vec<ModelParams>,
    /// Band-summed reflectance of the plate around the wells.
    #[serde(default = "default_background")]
    pub background: f64,
    #[serde(default)]
    pub glare: Option<GlareRing>,
    /// Relative noise per pixel and band.
    #[serde(default = "default_sigma")]
    pub sigma_rel: f64,
    /// Relative noise shared by all pixels of a well in one frame.
    #[serde(default)]
    pub well_sigma_rel: f64,
    #[serde(default = "default_white")]
    pub white_level: u16,
    #[serde(default = "default_dark")]
    pub dark_level: u16,
    #[serde(default)]
    pub seed: u64,
}

fn default_background() -> f64 {
    0.1
}
fn default_sigma() -> f64 {
    0.04
}
fn default_white() -> u16 {
    (0.6 * f64::from(u16::MAX)).round() as u16
}
fn default_dark() -> u16 {
    512
}

/// Decay constants of the demo plate rows, 1/hour.
const DEMO_RATES: [f64; 4] = [0.15, 0.1, 0.07, 0.05];

impl Scene {
    /// 24-well demo plate: 200 × 300 pixels, 16 bands, one decay rate per row.
    pub fn demo(seed: u64) -> Self {
        let layout = PlateLayout {
            rows: 4,
            cols: 6,
            radius: 16.0,
            pitch: 46.0,
            origin: None,
        };
        let wells = (0..layout.count())
            .map(|i| {
                ModelParams::Exp(ExpParams {
                    a: 6.0 + 0.2 * (i % 6) as f64,
                    k_d: DEMO_RATES[i / 6],
                    c: 1.5,
                })
            })
            .collect();
        Self {
            lines: 200,
            samples: 300,
            bands: 16,
            layout,
            wells,
            background: 1.6,
            glare: Some(GlareRing::default()),
            sigma_rel: 0.04,
            well_sigma_rel: 0.01,
            white_level: default_white(),
            dark_level: default_dark(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene: {m}")));
        if self.lines == 0 || self.samples == 0 || self.bands == 0 {
            return bad("frame dimensions must be positive".into());
        }
        let l = &self.layout;
        if l.count() == 0 || !(l.radius > 0.0) || !(l.pitch > 2.0 * l.radius) {
            return bad(format!("layout {l:?} needs wells with pitch > 2·radius"));
        }
        if self.wells.len() != 1 && self.wells.len() != l.count() {
            return bad(format!(
                "{} well models for {} wells",
                self.wells.len(),
                l.count()
            ));
        }
        for w in &self.wells {
            match w {
                ModelParams::Exp(p) => p.validate()?,
                ModelParams::Adv(p) => p.validate()?,
            }
        }
        for c in l.circles(self.lines, self.samples) {
            let inside = c.cx - c.r >= 0.0
                && c.cy - c.r >= 0.0
                && c.cx + c.r <= self.samples as f64 - 1.0
                && c.cy + c.r <= self.lines as f64 - 1.0;
            if !inside {
                return bad(format!(
                    "well {} at ({:.1}, {:.1}) does not fit in the frame",
                    c.index, c.cx, c.cy
                ));
            }
        }
        if !(self.sigma_rel >= 0.0) || !(self.well_sigma_rel >= 0.0) || !(self.background >= 0.0) {
            return bad("noise levels and background must be non-negative".into());
        }
        if self.white_level <= self.dark_level || self.white_level == SATURATED {
            return bad("need dark_level < white_level < 65535".into());
        }
        // Models only decay, so t = 0 carries the brightest signal.
        let peak = (0..self.well_count())
            .map(|i| self.expected_intensity(i, 0.0))
            .fold(self.background, f64::max)
            / self.bands as f64;
        let span = f64::from(self.white_level - self.dark_level);
        if f64::from(self.dark_level) + peak * span >= f64::from(SATURATED - 1) {
            return bad(format!(
                "per-band reflectance {peak:.3} would saturate the sensor; use more bands or a lower white_level"
            ));
        }
        Ok(())
    }

    pub fn circles(&self) -> Vec<Circle> {
        self.layout.circles(self.lines, self.samples)
    }

    pub fn well_count(&self) -> usize {
        self.layout.count()
    }

    /// Ground-truth model of well `i`.
    pub fn truth(&self, i: usize) -> ModelParams {
        if self.wells.len() == 1 {
            self.wells[0]
        } else {
            self.wells[i]
        }
    }

    /// Noise-free band-summed reflectance of well `i` at time `t`.
    pub fn expected_intensity(&self, i: usize, t: f64) -> f64 {
        self.truth(i).reflectance(t)
    }

    fn glare_map(&self, circles: &[Circle]) -> Vec<bool> {
        let mut map = vec![false; self.lines * self.samples];
        let Some(g) = self.glare else {
            return map;
        };
        for c in circles {
            let (gx, gy) = (c.cx + g.offset[0], c.cy + g.offset[1]);
            let (r_in, r_out) = (c.r + g.gap, c.r + g.gap + g.width);
            let y0 = (gy - r_out).floor().max(0.0) as usize;
            let y1 = ((gy + r_out).ceil() as usize).min(self.lines - 1);
            let x0 = (gx - r_out).floor().max(0.0) as usize;
            let x1 = ((gx + r_out).ceil() as usize).min(self.samples - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = (x as f64 - gx).hypot(y as f64 - gy);
                    if d >= r_in && d <= r_out {
                        map[y * self.samples + x] = true;
                    }
                }
            }
        }
        map
    }

    /// Pixels of each well disk covered by glare, counted on the pixel grid.
    pub fn glare_counts(&self) -> Vec<usize> {
        let circles = self.circles();
        let map = self.glare_map(&circles);
        circles
            .iter()
            .map(|c| {
                c.pixels(self.samples, self.lines)
                    .into_iter()
                    .filter(|&p| map[p])
                    .count()
            })
            .collect()
    }

    pub fn references(&self) -> Result<ReferenceFrames> {
        let wl = linear_wavelengths(self.bands);
        Ok(ReferenceFrames {
            white: Hypercube::uniform(1, self.samples, wl.clone(), self.white_level)?,
            dark: Hypercube::uniform(1, self.samples, wl, self.dark_level)?,
        })
    }
}

fn frame_rng(seed: u64, t: f64) -> ChaCha8Rng {
    let mix = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ t.to_bits().rotate_left(29);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Raw frame and flat references of `scene` at time `t` (hours).
pub fn gen_frame(scene: &Scene, t: f64) -> Result<(Hypercube, ReferenceFrames)> {
    scene.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "frame time must be >= 0, got {t}"
        )));
    }
    let (lines, samples, bands) = (scene.lines, scene.samples, scene.bands);
    let circles = scene.circles();
    let glare = scene.glare_map(&circles);
    let mut rng = frame_rng(scene.seed, t);
    let pixel_noise =
        Normal::new(0.0, scene.sigma_rel).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let well_noise =
        Normal::new(0.0, scene.well_sigma_rel).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let well_factor: Vec<f64> = (0..circles.len())
        .map(|_| 1.0 + well_noise.sample(&mut rng))
        .collect();
    let well_level: Vec<f64> = (0..circles.len())
        .map(|i| scene.expected_intensity(i, t) / bands as f64 * well_factor[i])
        .collect();

    // Which well (if any) owns each pixel.
    let mut owner = vec![usize::MAX; lines * samples];
    for c in &circles {
        for p in c.pixels(samples, lines) {
            owner[p] = c.index;
        }
    }
    let background = scene.background / bands as f64;
    let dark = f64::from(scene.dark_level);
    let span = f64::from(scene.white_level) - dark;
    let ceiling = f64::from(SATURATED - 1);
    let mut data = vec![0u16; lines * samples * bands];
    for line in 0..lines {
        for band in 0..bands {
            for sample in 0..samples {
                let p = line * samples + sample;
                let idx = (line * bands + band) * samples + sample;
                if glare[p] {
                    data[idx] = SATURATED;
                    continue;
                }
                let rho = match owner[p] {
                    usize::MAX => background,
                    w => well_level[w],
                };
                let noisy = rho * (1.0 + pixel_noise.sample(&mut rng));
                data[idx] = (dark + noisy * span).round().clamp(0.0, ceiling) as u16;
            }
        }
    }
    let mut raw = Hypercube::new(
        lines,
        samples,
        bands,
        linear_wavelengths(bands),
        data,
        Default::default(),
    )?;
    raw.meta.exposure = Some("synthetic".into());
    Ok((raw, scene.references()?))
}

/// `I_i = model(t_i)·(1 + η_i)`, `η_i ~ N(0, σ_rel)`, deterministic under `seed`.
pub fn gen_series(
    params: &ModelParams,
    times: &[f64],
    sigma_rel: f64,
    seed: u64,
) -> Result<IntensitySeries> {
    let noise = Normal::new(0.0, sigma_rel).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = times
        .iter()
        .map(|&t| (params.reflectance(t) * (1.0 + noise.sample(&mut rng))).max(0.0))
        .collect();
    IntensitySeries::from_values(0, times, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{flat_field, load_cube, save_cube};
    use crate::roi::{
        auto_tune, build_masks, detection_image, HoughParams, RoiSet, DEFAULT_SAT_LEVEL,
    };
    use crate::series::extract_intensity;

    fn quiet(mut s: Scene) -> Scene {
        s.sigma_rel = 0.0;
        s.well_sigma_rel = 0.0;
        s
    }

    fn intensities(scene: &Scene, t: f64) -> Vec<f64> {
        let (raw, refs) = gen_frame(scene, t).unwrap();
        let rois = RoiSet::from_circles(scene.circles()).unwrap();
        let rois = build_masks(&rois, &raw, DEFAULT_SAT_LEVEL).unwrap();
        let cal = flat_field(&raw, &refs, 1.0).unwrap();
        extract_intensity(&cal, &rois)
            .unwrap()
            .readings
            .iter()
            .map(|r| r.intensity)
            .collect()
    }

    #[test]
    fn saturating_signal_is_rejected() {
        let mut scene = Scene::demo(1);
        scene.bands = 4;
        let err = scene.validate().unwrap_err().to_string();
        assert!(err.contains("saturate"), "{err}");
        scene.bands = 16;
        scene.validate().unwrap();
    }

    #[test]
    fn noise_free_frame_matches_model() {
        let scene = quiet(Scene::demo(1));
        for (i, v) in intensities(&scene, 0.0).iter().enumerate() {
            let ModelParams::Exp(p) = scene.truth(i) else {
                panic!()
            };
            assert!(
                ((v - (p.a + p.c)) / (p.a + p.c)).abs() < 1e-4,
                "well {i}: {v}"
            );
        }
    }

    #[test]
    fn noise_free_decay_ratio() {
        let mut scene = quiet(Scene::demo(1));
        scene.wells = vec![ModelParams::Exp(ExpParams {
            a: 8.0,
            k_d: std::f64::consts::LN_2,
            c: 2.0,
        })];
        let i0 = intensities(&scene, 0.0);
        let i1 = intensities(&scene, 1.0);
        for (a, b) in i0.iter().zip(&i1) {
            assert!(((b - 2.0) / (a - 2.0) - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn glare_counts_match_mask_exclusions() {
        for seed in 0..3 {
            let scene = Scene::demo(seed);
            let (raw, _) = gen_frame(&scene, 2.0).unwrap();
            let rois = build_masks(
                &RoiSet::from_circles(scene.circles()).unwrap(),
                &raw,
                DEFAULT_SAT_LEVEL,
            )
            .unwrap();
            let counts = scene.glare_counts();
            assert!(counts.iter().all(|&c| c > 0));
            assert_eq!(rois.excluded, counts);
        }
    }

    #[test]
    fn signal_never_saturates() {
        let mut scene = Scene::demo(5);
        scene.glare = None;
        let (raw, _) = gen_frame(&scene, 0.0).unwrap();
        assert!(raw.data().iter().all(|&v| v < SATURATED));
    }

    #[test]
    fn frames_are_deterministic_and_round_trip() {
        let scene = Scene::demo(9);
        let (a, _) = gen_frame(&scene, 3.5).unwrap();
        let (b, _) = gen_frame(&scene, 3.5).unwrap();
        assert_eq!(a, b);
        let (c, _) = gen_frame(&scene, 4.0).unwrap();
        assert_ne!(a.data(), c.data());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame");
        save_cube(&a, &path).unwrap();
        assert_eq!(load_cube(&path).unwrap(), a);
    }

    #[test]
    fn demo_plate_is_detected() {
        let scene = Scene::demo(3);
        let (raw, refs) = gen_frame(&scene, 0.0).unwrap();
        let cal = flat_field(&raw, &refs, 1.0).unwrap();
        let img = detection_image(&cal, &raw, DEFAULT_SAT_LEVEL).unwrap();
        let init = HoughParams {
            r_min: 12.0,
            r_max: 20.0,
            ..Default::default()
        };
        let (rois, _) = auto_tune(&img, 24, &init).unwrap();
        for (got, want) in rois.circles.iter().zip(scene.circles()) {
            assert!(got.center_distance(&want) < 2.0, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn series_noise_statistics() {
        let flat = ModelParams::Exp(ExpParams {
            a: 1e-12,
            k_d: 0.0,
            c: 5.0,
        });
        let times: Vec<f64> = (0..10_000).map(f64::from).collect();
        let s = gen_series(&flat, &times, 0.04, 17).unwrap();
        let v: Vec<f64> = s.values().iter().map(|x| x / 5.0).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!((0.038..=0.042).contains(&sd), "{sd}");
        assert_eq!(s, gen_series(&flat, &times, 0.04, 17).unwrap());
        let exact = gen_series(&flat, &times[..5], 0.0, 1).unwrap();
        assert!(exact.values().iter().all(|&x| x == flat.reflectance(0.0)));
    }

    #[test]
    fn scene_validation() {
        let mut s = Scene::demo(0);
        s.layout.radius = 30.0;
        assert!(s.validate().is_err());
        let mut s = Scene::demo(0);
        s.wells.truncate(3);
        assert!(s.validate().is_err());
        let mut s = Scene::demo(0);
        s.layout.origin = Some([5.0, 5.0]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn scene_toml_round_trip() {
        let s = Scene::demo(4);
        let text = toml::to_string(&s).unwrap();
        let back: Scene = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
