//! Per-well intensity time series, their CSV store and replicate statistics.
//!
//! "Total reflected intensity" of a well is the mean, over the well's mask
//! pixels, of the reflectance summed across bands. Averaging over pixels
//! keeps wells of different area (or with different saturation losses)
//! comparable.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypercube::CalibratedCube;
use crate::roi::RoiSet;

/// Human-readable statement of the intensity definition, for reports.
pub const INTENSITY_DEFINITION: &str =
    "mean over unsaturated mask pixels of the band-summed reflectance";

pub const CSV_HEADER: [&str; 3] = ["sample_id", "time_hours", "intensity"];

/// Recommended mass-per-imaged-area window (mg/cm²) for linear optics.
pub const RHO_A_RANGE: (f64, f64) = (2.0, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Hours since the start of the experiment.
    pub t: f64,
    pub intensity: f64,
}

/// Advisory sample metadata; never used to gate analysis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polymer: Option<String>,
    /// Polymer mass per imaged area, mg/cm².
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_a: Option<f64>,
}

impl SeriesMeta {
    /// Warning text when the mass-per-area tag falls outside [`RHO_A_RANGE`].
    pub fn rho_a_warning(&self) -> Option<String> {
        let rho = self.rho_a?;
        let (lo, hi) = RHO_A_RANGE;
        (!(lo..=hi).contains(&rho)).then(|| {
            format!("rho_a = {rho} mg/cm^2 is outside {lo}-{hi} mg/cm^2; reflectance may not be linear in mass")
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleId {
    pub index: usize,
    pub label: String,
}

impl SampleId {
    pub fn well(index: usize) -> Self {
        Self {
            index,
            label: format!("W{index:02}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySeries {
    pub sample: SampleId,
    points: Vec<SeriesPoint>,
    pub meta: SeriesMeta,
}

impl IntensitySeries {
    pub fn new(sample: SampleId, points: Vec<SeriesPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput(
                "a series needs at least one point".into(),
            ));
        }
        let mut s = Self {
            sample,
            points: Vec::with_capacity(points.len()),
            meta: SeriesMeta::default(),
        };
        for p in points {
            s.push(p.t, p.intensity)?;
        }
        Ok(s)
    }

    pub fn from_values(index: usize, times: &[f64], values: &[f64]) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        let points = times
            .iter()
            .zip(values)
            .map(|(&t, &intensity)| SeriesPoint { t, intensity })
            .collect();
        Self::new(SampleId::well(index), points)
    }

    /// Appends a point; `t` must be after the last point and `intensity ≥ 0`.
    pub fn push(&mut self, t: f64, intensity: f64) -> Result<()> {
        if !t.is_finite() || !intensity.is_finite() || intensity < 0.0 {
            return Err(Error::InvalidInput(format!(
                "point (t = {t}, I = {intensity}) must be finite with I >= 0"
            )));
        }
        if let Some(last) = self.points.last() {
            if t <= last.t {
                return Err(Error::NonMonotoneTime {
                    sample: self.sample.index,
                    last: last.t,
                    new: t,
                });
            }
        }
        self.points.push(SeriesPoint { t, intensity });
        Ok(())
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.intensity).collect()
    }

    pub fn last(&self) -> Option<SeriesPoint> {
        self.points.last().copied()
    }

    /// New series containing the points at `indices` (ascending).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let points = indices
            .iter()
            .map(|&i| {
                self.points
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("subset index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s = Self::new(self.sample.clone(), points)?;
        s.meta = self.meta.clone();
        Ok(s)
    }
}

/// One well's intensity from one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub sample: usize,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedWell {
    pub sample: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub readings: Vec<Reading>,
    pub skipped: Vec<SkippedWell>,
}

/// Per-well intensity from a calibrated cube. Pixels with any invalid
/// calibrated element are left out of the mean; wells left with no pixel
/// are skipped with a warning record.
pub fn extract_intensity(cal: &CalibratedCube, rois: &RoiSet) -> Result<Extraction> {
    if !rois.has_masks() {
        return Err(Error::InvalidInput("ROI masks have not been built".into()));
    }
    let samples = cal.samples();
    let mut out = Extraction::default();
    for (i, c) in rois.circles.iter().enumerate() {
        let mut total = 0.0;
        let mut n = 0usize;
        for &p in &rois.masks[i] {
            let (line, sample) = (p / samples, p % samples);
            if line >= cal.lines() {
                return Err(Error::Dimension(format!(
                    "mask pixel {p} lies outside the {}x{samples} cube",
                    cal.lines()
                )));
            }
            let band_sum: Option<f64> = (0..cal.bands()).map(|b| cal.get(line, sample, b)).sum();
            if let Some(s) = band_sum {
                total += s;
                n += 1;
            }
        }
        if n == 0 {
            let reason = if rois.masks[i].is_empty() {
                "mask emptied by saturation".to_string()
            } else {
                "no pixel with a valid calibration".to_string()
            };
            log::warn!("well {} skipped: {reason}", c.index);
            out.skipped.push(SkippedWell {
                sample: c.index,
                reason,
            });
            continue;
        }
        out.readings.push(Reading {
            sample: c.index,
            intensity: total / n as f64,
        });
    }
    if out.readings.is_empty() {
        return Err(Error::NoUsableWells);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarSample {
    index: usize,
    label: String,
    #[serde(default)]
    meta: SeriesMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    intensity_definition: String,
    samples: Vec<SidecarSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// All series of one experiment, keyed by well index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesStore {
    series: BTreeMap<usize, IntensitySeries>,
    path: Option<PathBuf>,
}

impl SeriesStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store that rewrites `path` (CSV) after every successful append.
    pub fn persisted(path: impl Into<PathBuf>) -> Self {
        Self {
            series: BTreeMap::new(),
            path: Some(path.into()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, sample: usize) -> Option<&IntensitySeries> {
        self.series.get(&sample)
    }

    pub fn get_mut(&mut self, sample: usize) -> Option<&mut IntensitySeries> {
        self.series.get_mut(&sample)
    }

    pub fn iter(&self) -> impl Iterator<Item = &IntensitySeries> {
        self.series.values()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn insert(&mut self, s: IntensitySeries) {
        self.series.insert(s.sample.index, s);
    }

    /// Appends one reading per sample at time `t`. Either every reading is
    /// appended or none is. When the store is persisted the CSV is rewritten
    /// atomically.
    pub fn append_measurement(&mut self, readings: &[Reading], t: f64) -> Result<()> {
        for r in readings {
            if let Some(last) = self.series.get(&r.sample).and_then(|s| s.last()) {
                if t <= last.t {
                    return Err(Error::NonMonotoneTime {
                        sample: r.sample,
                        last: last.t,
                        new: t,
                    });
                }
            }
            if !t.is_finite() || !r.intensity.is_finite() || r.intensity < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "reading for sample {} (t = {t}, I = {}) must be finite with I >= 0",
                    r.sample, r.intensity
                )));
            }
        }
        for r in readings {
            match self.series.get_mut(&r.sample) {
                Some(s) => s.push(t, r.intensity)?,
                None => {
                    let point = SeriesPoint {
                        t,
                        intensity: r.intensity,
                    };
                    self.insert(IntensitySeries::new(SampleId::well(r.sample), vec![point])?);
                }
            }
        }
        if let Some(path) = self.path.clone() {
            self.write_csv(&path)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for s in self.series.values() {
            for p in s.points() {
                w.write_record([
                    s.sample.index.to_string(),
                    p.t.to_string(),
                    p.intensity.to_string(),
                ])?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("CSV buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes the CSV through a temporary file and a rename.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv_string()?.as_bytes())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Format(format!(
                "CSV header must be `{}`, got `{}`",
                CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut store = SeriesStore::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").trim();
            let line = row + 2;
            let sample: usize = field(0)
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: bad sample_id {:?}", field(0))))?;
            let t: f64 = field(1).parse().map_err(|_| {
                Error::Format(format!("line {line}: bad time_hours {:?}", field(1)))
            })?;
            let intensity: f64 = field(2)
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: bad intensity {:?}", field(2))))?;
            match store.series.get_mut(&sample) {
                Some(s) => s.push(t, intensity)?,
                None => store.insert(IntensitySeries::new(
                    SampleId::well(sample),
                    vec![SeriesPoint { t, intensity }],
                )?),
            }
        }
        Ok(store)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    /// JSON metadata sidecar: labels, advisory metadata, intensity definition.
    pub fn sidecar_json(&self, provenance: Option<serde_json::Value>) -> Result<String> {
        let sidecar = Sidecar {
            intensity_definition: INTENSITY_DEFINITION.to_string(),
            samples: self
                .series
                .values()
                .map(|s| SidecarSample {
                    index: s.sample.index,
                    label: s.sample.label.clone(),
                    meta: s.meta.clone(),
                })
                .collect(),
            provenance,
        };
        Ok(serde_json::to_string_pretty(&sidecar)?)
    }

    /// Applies labels and metadata from a sidecar written by [`SeriesStore::sidecar_json`].
    pub fn apply_sidecar(&mut self, text: &str) -> Result<()> {
        let sidecar: Sidecar = serde_json::from_str(text)?;
        for s in sidecar.samples {
            if let Some(series) = self.series.get_mut(&s.index) {
                series.sample.label = s.label;
                series.meta = s.meta;
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Mean, sample standard deviation and a 2σ half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95_half_width: f64,
}

/// Statistics over replicate values (n − 1 denominator). The 95% half-width
/// uses a multiplier of exactly 2.
pub fn replicate_stats(values: &[f64]) -> Result<ReplicateStats> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientReplicates(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    Ok(ReplicateStats {
        n,
        mean,
        std,
        ci95_half_width: 2.0 * std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypercube::{flat_field, linear_wavelengths, Hypercube, ReferenceFrames};
    use crate::roi::{build_masks, Circle, DEFAULT_SAT_LEVEL};
    use proptest::prelude::*;

    fn uniform_scene(bands: usize, saturate_left_half: bool) -> (CalibratedCube, RoiSet) {
        let wl = linear_wavelengths(bands);
        let circles = vec![Circle::new(10.0, 10.0, 6.0), Circle::new(30.0, 10.0, 6.0)];
        let raw = Hypercube::from_fn(20, 40, wl.clone(), |l, s, _| {
            let in_left = circles
                .iter()
                .any(|c| c.contains(s as f64, l as f64) && (s as f64) < c.cx);
            if saturate_left_half && in_left {
                u16::MAX
            } else {
                20_000
            }
        })
        .unwrap();
        let refs = ReferenceFrames {
            white: Hypercube::uniform(1, 40, wl.clone(), 40_000).unwrap(),
            dark: Hypercube::uniform(1, 40, wl, 0).unwrap(),
        };
        let rois = RoiSet::from_circles(circles).unwrap();
        let rois = build_masks(&rois, &raw, DEFAULT_SAT_LEVEL).unwrap();
        (flat_field(&raw, &refs, 1.0).unwrap(), rois)
    }

    #[test]
    fn uniform_half_reflectance_sums_bands() {
        let (cal, rois) = uniform_scene(224, false);
        let ex = extract_intensity(&cal, &rois).unwrap();
        assert_eq!(ex.readings.len(), 2);
        for r in &ex.readings {
            assert!((r.intensity - 112.0).abs() < 1e-9, "{}", r.intensity);
        }
    }

    #[test]
    fn partial_saturation_leaves_uniform_mean_unchanged() {
        let (cal, rois) = uniform_scene(16, true);
        assert!(rois.excluded.iter().all(|e| *e > 0));
        let ex = extract_intensity(&cal, &rois).unwrap();
        for r in &ex.readings {
            assert!((r.intensity - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unusable_wells_are_skipped() {
        let (cal, rois) = uniform_scene(4, false);
        let mut rois = rois;
        rois.masks[1].clear();
        let ex = extract_intensity(&cal, &rois).unwrap();
        assert_eq!(ex.readings.len(), 1);
        assert_eq!(ex.skipped.len(), 1);
        assert_eq!(ex.skipped[0].sample, 1);
        rois.masks[0].clear();
        assert!(matches!(
            extract_intensity(&cal, &rois),
            Err(Error::NoUsableWells)
        ));
    }

    #[test]
    fn append_and_reject_non_monotone() {
        let mut store = SeriesStore::new();
        store
            .append_measurement(
                &[Reading {
                    sample: 0,
                    intensity: 3.0,
                }],
                0.0,
            )
            .unwrap();
        assert_eq!(store.get(0).unwrap().len(), 1);
        store
            .append_measurement(
                &[Reading {
                    sample: 0,
                    intensity: 2.0,
                }],
                1.0,
            )
            .unwrap();
        let err = store.append_measurement(
            &[Reading {
                sample: 0,
                intensity: 1.0,
            }],
            0.5,
        );
        match err {
            Err(Error::NonMonotoneTime { last, new, .. }) => {
                assert_eq!((last, new), (1.0, 0.5));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(store.get(0).unwrap().len(), 2);
    }

    #[test]
    fn persisted_store_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intensity.csv");
        let mut store = SeriesStore::persisted(&path);
        for i in 0..3 {
            let readings = [
                Reading {
                    sample: 0,
                    intensity: 10.0 - i as f64,
                },
                Reading {
                    sample: 1,
                    intensity: 0.1 / (i + 1) as f64,
                },
            ];
            store
                .append_measurement(&readings, 0.25 * i as f64)
                .unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,time_hours,intensity\n0,0,10\n"));
        assert_eq!(text.lines().count(), 7);
        let back = SeriesStore::load_csv(&path).unwrap();
        assert_eq!(back.get(1).unwrap(), store.get(1).unwrap());
    }

    #[test]
    fn csv_errors_are_located() {
        assert!(SeriesStore::parse_csv("a,b,c\n").is_err());
        let err =
            SeriesStore::parse_csv("sample_id,time_hours,intensity\n0,1,2\n0,x,3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(
            SeriesStore::parse_csv("sample_id,time_hours,intensity\n0,1,2\n0,0.5,3\n").is_err()
        );
    }

    #[test]
    fn sidecar_round_trip() {
        let mut store = SeriesStore::new();
        let mut s = IntensitySeries::from_values(3, &[0.0, 1.0], &[2.0, 1.0]).unwrap();
        s.meta = SeriesMeta {
            ph: Some(12.3),
            polymer: Some("PLA1".into()),
            rho_a: Some(2.5),
        };
        store.insert(s.clone());
        let json = store.sidecar_json(None).unwrap();
        assert!(json.contains(INTENSITY_DEFINITION));
        let mut other = SeriesStore::parse_csv(&store.to_csv_string().unwrap()).unwrap();
        other.apply_sidecar(&json).unwrap();
        assert_eq!(other.get(3).unwrap(), &s);
    }

    #[test]
    fn rho_a_is_advisory() {
        let mut m = SeriesMeta::default();
        assert!(m.rho_a_warning().is_none());
        m.rho_a = Some(2.4);
        assert!(m.rho_a_warning().is_none());
        m.rho_a = Some(4.0);
        assert!(m.rho_a_warning().is_some());
    }

    #[test]
    fn replicate_stats_values() {
        let s = replicate_stats(&[10.0, 10.0, 10.0]).unwrap();
        assert_eq!((s.std, s.ci95_half_width), (0.0, 0.0));
        let s = replicate_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.ci95_half_width), (2.0, 1.0, 2.0));
        assert!(matches!(
            replicate_stats(&[1.0]),
            Err(Error::InsufficientReplicates(1))
        ));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(raw in prop::collection::vec(
            (0usize..5, prop::collection::vec((1e-6f64..1e3, 0.0f64..1e6), 1..20)), 1..5)) {
            let mut store = SeriesStore::new();
            for (idx, pts) in raw {
                let mut t = 0.0;
                let mut s = IntensitySeries::new(SampleId::well(idx), vec![SeriesPoint { t: 0.0, intensity: 1.0 }]).unwrap();
                for (dt, i) in pts {
                    t += dt;
                    s.push(t, i).unwrap();
                }
                store.insert(s);
            }
            let back = SeriesStore::parse_csv(&store.to_csv_string().unwrap()).unwrap();
            prop_assert_eq!(back, store);
        }

        #[test]
        fn intensity_ignores_mask_erosion(keep in prop::collection::vec(any::<bool>(), 120)) {
            let (cal, mut rois) = uniform_scene(5, false);
            let full = rois.masks[0].clone();
            rois.masks[0] = full.iter().zip(keep.iter().cycle()).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
            prop_assume!(!rois.masks[0].is_empty());
            let ex = extract_intensity(&cal, &rois).unwrap();
            prop_assert!((ex.readings[0].intensity - 2.5).abs() < 1e-12);
        }
    }
}
