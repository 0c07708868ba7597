//! Campaign runner: the full acquire → calibrate → detect → extract →
//! schedule loop on a simulated clock.
//!
//! Workspace layout written under the output directory:
//!
//! ```text
//! ledger.jsonl          run ledger, one JSON record per line
//! rois.json             wells detected on the first frame
//! frames/frame_NNNN.*   raw frames (when `save_frames` is set)
//! frames/white.*, dark.* reference frames of the first saved frame
//! series/intensity.csv  per-well intensity series
//! series/intensity.json series metadata sidecar
//! fits/well_NN.json     exponential and advanced fits per well
//! fits/summary.json     one summary row per well
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Sampling, StationConfig};
use super::device::SimClock;
use super::ledger::{Record, RunLedger, RunStats};
use super::program::{run_program, Station};
use crate::error::{Error, Result};
use crate::fit::{fit_both, select_model, FitOptions, FitResult};
use crate::hypercube::{flat_field, load_cube, save_cube, Hypercube, ReferenceFrames};
use crate::models::ModelKind;
use crate::roi::{auto_tune, build_masks, detection_image, RoiSet};
use crate::sampler::{aggregate, DecisionKind, SamplerDecision, SamplerState};
use crate::series::{extract_intensity, write_atomic, SeriesStore};
use crate::synth::{gen_frame, Scene};

/// Where frames come from.
pub trait FrameSource {
    /// Frame for `iteration`, acquired at simulated time `t` (hours);
    /// `None` once the source is exhausted.
    fn frame(&mut self, iteration: usize, t: f64) -> Result<Option<(Hypercube, ReferenceFrames)>>;
}

/// Frames rendered from a synthetic scene at the acquisition time.
pub struct SynthSource {
    pub scene: Scene,
}

impl FrameSource for SynthSource {
    fn frame(&mut self, _iteration: usize, t: f64) -> Result<Option<(Hypercube, ReferenceFrames)>> {
        gen_frame(&self.scene, t).map(Some)
    }
}

/// Recorded frames in a directory: `white.hdr` and `dark.hdr` references
/// plus any other headers, replayed in file-name order.
pub struct CubeDirectory {
    frames: Vec<PathBuf>,
    refs: ReferenceFrames,
}

impl CubeDirectory {
    pub fn open(dir: &Path) -> Result<Self> {
        let refs = ReferenceFrames {
            white: load_cube(dir.join("white.hdr"))?,
            dark: load_cube(dir.join("dark.hdr"))?,
        };
        let mut frames: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "hdr"))
            .filter(|p| {
                !matches!(
                    p.file_stem().and_then(|s| s.to_str()),
                    Some("white" | "dark")
                )
            })
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no frames in {}",
                dir.display()
            )));
        }
        Ok(Self { frames, refs })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl FrameSource for CubeDirectory {
    fn frame(&mut self, iteration: usize, _t: f64) -> Result<Option<(Hypercube, ReferenceFrames)>> {
        match self.frames.get(iteration) {
            Some(p) => Ok(Some((load_cube(p)?, self.refs.clone()))),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOptions {
    pub fit: FitOptions,
    /// Embedded verbatim in every JSON output.
    pub provenance: Option<serde_json::Value>,
}

/// Fits of one well; `error` is set when fitting was not possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellFit {
    pub sample: usize,
    pub label: String,
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exp: Option<FitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adv: Option<FitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Summary row of `fits/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub sample: usize,
    pub label: String,
    pub points: usize,
    pub selected: Option<ModelKind>,
    pub half_life_h: Option<f64>,
    pub total_life_exp_h: Option<f64>,
    pub total_life_adv_h: Option<f64>,
    pub r2_exp: Option<f64>,
    pub r2_adv: Option<f64>,
    pub aic_exp: Option<f64>,
    pub aic_adv: Option<f64>,
    pub mdl_exp: Option<f64>,
    pub mdl_adv: Option<f64>,
}

impl WellFit {
    pub fn summary(&self) -> FitSummary {
        let e = self.exp.as_ref();
        let a = self.adv.as_ref();
        FitSummary {
            sample: self.sample,
            label: self.label.clone(),
            points: self.points,
            selected: self.selected,
            half_life_h: e.and_then(FitResult::half_life),
            total_life_exp_h: e.map(FitResult::total_life),
            total_life_adv_h: a.map(FitResult::total_life),
            r2_exp: e.map(|f| f.r_squared),
            r2_adv: a.map(|f| f.r_squared),
            aic_exp: e.map(|f| f.aic),
            aic_adv: a.map(|f| f.aic),
            mdl_exp: e.map(|f| f.mdl),
            mdl_adv: a.map(|f| f.mdl),
        }
    }
}

#[derive(Debug)]
pub struct CampaignOutcome {
    pub records: Vec<Record>,
    pub stats: RunStats,
    pub store: SeriesStore,
    pub rois: Option<RoiSet>,
    pub fits: Vec<WellFit>,
    /// Iterations actually started.
    pub iterations: usize,
}

/// Fits both models to every series and picks one by AIC.
pub fn fit_store(store: &SeriesStore, opts: &FitOptions) -> Vec<WellFit> {
    store
        .iter()
        .map(|s| {
            let mut w = WellFit {
                sample: s.sample.index,
                label: s.sample.label.clone(),
                points: s.len(),
                exp: None,
                adv: None,
                selected: None,
                error: None,
            };
            match fit_both(s, opts) {
                Ok((e, a)) => {
                    w.selected = select_model(&[e.clone(), a.clone()]).ok().map(|f| f.model);
                    w.exp = Some(e);
                    w.adv = Some(a);
                }
                Err(err) => {
                    // Keep whichever single fit works.
                    match crate::fit::fit_exponential_with(s, opts) {
                        Ok(e) => {
                            w.selected = Some(e.model);
                            w.exp = Some(e);
                        }
                        Err(_) => w.error = Some(err.to_string()),
                    }
                }
            }
            w
        })
        .collect()
}

fn with_provenance<T: Serialize>(
    value: &T,
    provenance: &Option<serde_json::Value>,
) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    if let (Some(p), serde_json::Value::Object(map)) = (provenance, &mut v) {
        map.insert("provenance".into(), p.clone());
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// Writes `fits/well_NN.json` and `fits/summary.json`.
pub fn write_fits(
    dir: &Path,
    fits: &[WellFit],
    provenance: &Option<serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in fits {
        let path = dir.join(format!("well_{:02}.json", f.sample));
        write_atomic(&path, with_provenance(f, provenance)?.as_bytes())?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        log_base: &'static str,
        wells: Vec<FitSummary>,
        #[serde(skip_serializing_if = "Option::is_none")]
        provenance: &'a Option<serde_json::Value>,
    }
    let summary = Summary {
        log_base: "e",
        wells: fits.iter().map(WellFit::summary).collect(),
        provenance,
    };
    write_atomic(
        &dir.join("summary.json"),
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Runs `cfg` against `source`, writing the workspace under `out`.
pub fn run_campaign(
    cfg: &StationConfig,
    source: &mut dyn FrameSource,
    out: &Path,
) -> Result<CampaignOutcome> {
    run_campaign_with(cfg, source, out, &CampaignOptions::default())
}

pub fn run_campaign_with(
    cfg: &StationConfig,
    source: &mut dyn FrameSource,
    out: &Path,
    opts: &CampaignOptions,
) -> Result<CampaignOutcome> {
    cfg.validate()?;
    let c = &cfg.campaign;
    for sub in ["frames", "series", "fits"] {
        mkdir(&out.join(sub))?;
    }
    let mut ledger = RunLedger::create(&out.join("ledger.jsonl"))?;
    let mut devices = cfg.registry()?;
    let mut clock = SimClock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut store = SeriesStore::persisted(out.join("series").join("intensity.csv"));
    let mut rois: Option<RoiSet> = None;
    let mut samplers: BTreeMap<usize, SamplerState> = BTreeMap::new();
    let mut stopped: BTreeSet<usize> = BTreeSet::new();
    let mut next_t = 0.0;
    let mut gap = match &cfg.sampling {
        Sampling::Fixed { interval_h } => *interval_h,
        Sampling::Adaptive { dt0_h, .. } => *dt0_h,
    };
    let mut iterations = 0;
    let mut refs_saved = false;

    'campaign: for iteration in 0..c.max_iterations {
        iterations += 1;
        clock.wait_until(next_t);
        let mut measured_at = None;
        for slot in c.programs.iter().filter(|s| iteration % s.every == 0) {
            let program = &cfg.programs[&slot.id];
            let mut succeeded = None;
            for attempt in 0..2 {
                let mut st = Station {
                    devices: &mut devices,
                    clock: &mut clock,
                    rng: &mut rng,
                    ledger: &mut ledger,
                    geometry: &cfg.geometry,
                };
                let o = run_program(program, &mut st, iteration, attempt)?;
                if o.ok {
                    succeeded = Some(o.started);
                    break;
                }
            }
            if slot.id != c.imaging_program {
                continue;
            }
            let Some(t_meas) = succeeded else {
                let t = clock.tick();
                ledger.append(Record::Skip {
                    t,
                    iteration,
                    reason: "imaging program failed twice".into(),
                })?;
                continue;
            };
            let Some((raw, refs)) = source.frame(iteration, t_meas)? else {
                let t = clock.tick();
                ledger.append(Record::Stop {
                    t,
                    iteration,
                    reason: "frame source exhausted".into(),
                })?;
                break 'campaign;
            };
            let frame = if c.save_frames {
                if !refs_saved {
                    save_cube(&refs.white, out.join("frames").join("white.hdr"))?;
                    save_cube(&refs.dark, out.join("frames").join("dark.hdr"))?;
                    refs_saved = true;
                }
                let name = format!("frame_{iteration:04}.hdr");
                save_cube(&raw, out.join("frames").join(&name))?;
                Some(format!("frames/{name}"))
            } else {
                None
            };
            let cal = flat_field(&raw, &refs, 1.0)?;
            if rois.is_none() {
                let expected = cfg.expected_wells().ok_or_else(|| {
                    Error::Config("campaign.expected_wells is required without a scene".into())
                })?;
                let img = detection_image(&cal, &raw, c.sat_level)?;
                let (found, _) = auto_tune(&img, expected, &cfg.detection)?;
                let record: serde_json::Value = serde_json::from_str(&found.to_json()?)?;
                write_atomic(
                    &out.join("rois.json"),
                    with_provenance(&record, &opts.provenance)?.as_bytes(),
                )?;
                rois = Some(found);
            }
            let masks = build_masks(rois.as_ref().expect("set above"), &raw, c.sat_level)?;
            let extraction = match extract_intensity(&cal, &masks) {
                Ok(x) => x,
                Err(Error::NoUsableWells) => {
                    let t = clock.tick();
                    ledger.append(Record::Skip {
                        t,
                        iteration,
                        reason: "no usable wells".into(),
                    })?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            store.append_measurement(&extraction.readings, t_meas)?;
            let t = clock.tick();
            ledger.append(Record::Measurement {
                t,
                iteration,
                time_hours: t_meas,
                wells: extraction.readings.len(),
                skipped: extraction.skipped.iter().map(|s| s.sample).collect(),
                frame,
            })?;
            measured_at = Some(t_meas);

            if let Sampling::Adaptive { dt0_h, sampler } = &cfg.sampling {
                let mut decisions = Vec::new();
                for r in &extraction.readings {
                    if stopped.contains(&r.sample) {
                        continue;
                    }
                    let state = match samplers.get_mut(&r.sample) {
                        Some(s) => s,
                        None => samplers
                            .entry(r.sample)
                            .or_insert(SamplerState::new(*dt0_h)?),
                    };
                    let d = if state.is_empty() {
                        state.record(t_meas, r.intensity)?;
                        SamplerDecision {
                            kind: DecisionKind::Continue,
                            t_next: Some(t_meas + state.interval()),
                            i_e: 0.0,
                            delta_i: 0.0,
                            d: None,
                            s: None,
                        }
                    } else {
                        state.step(sampler, t_meas, r.intensity)?
                    };
                    if d.is_stop() {
                        stopped.insert(r.sample);
                    }
                    decisions.push(d);
                }
                if decisions.is_empty() || aggregate(&decisions)?.is_stop() {
                    let t = clock.tick();
                    ledger.append(Record::Stop {
                        t,
                        iteration,
                        reason: "every well reached the stop threshold".into(),
                    })?;
                    break 'campaign;
                }
                let t_next = aggregate(&decisions)?.t_next.expect("not a stop");
                gap = t_next - t_meas;
                for (w, s) in samplers.iter_mut() {
                    if !stopped.contains(w) {
                        s.set_interval(gap);
                    }
                }
            }
        }
        next_t = match (&cfg.sampling, measured_at) {
            (Sampling::Fixed { interval_h }, _) => (iteration + 1) as f64 * interval_h,
            (Sampling::Adaptive { .. }, Some(t)) => t + gap,
            (Sampling::Adaptive { .. }, None) => clock.now() + gap,
        };
    }
    ledger.flush()?;

    let fits = fit_store(&store, &opts.fit);
    write_fits(&out.join("fits"), &fits, &opts.provenance)?;
    let sidecar = store.sidecar_json(opts.provenance.clone())?;
    write_atomic(
        &out.join("series").join("intensity.json"),
        (sidecar + "\n").as_bytes(),
    )?;
    let records = ledger.records().to_vec();
    Ok(CampaignOutcome {
        stats: RunStats::from_records(&records),
        records,
        store,
        rois,
        fits,
        iterations,
    })
}
