//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hyperchar::fit::{fit_exponential_with, FitOptions, FitResult, Weighting};
use hyperchar::hypercube::{
    flat_field, load_calibrated, load_cube, parse_header, paths_for, project_gray, save_calibrated,
    DataType, ReferenceFrames,
};
use hyperchar::models::DEFAULT_THETA;
use hyperchar::roi::{
    auto_tune, build_masks, detect_circles, detection_image, HoughParams, RoiSet, DEFAULT_SAT_LEVEL,
};
use hyperchar::sampler::{replay as replay_series, SamplerConfig};
use hyperchar::series::{extract_intensity, replicate_stats, IntensitySeries, SeriesStore};
use hyperchar::station::{
    fit_store, run_campaign_with, write_fits, CampaignOptions, CubeDirectory, FitSummary,
    FrameSource, StationConfig, SynthSource, WellFit, DEMO_CONFIG,
};
use serde::{Deserialize, Serialize};

use crate::plot::{Curve, Plot, Points};
use crate::workspace::{sha256_hex, CmdResult, Failure, Provenance, Workspace};

fn provenance<T: Serialize>(command: &'static str, seed: u64, config: &T) -> CmdResult<Provenance> {
    Ok(Provenance::new(command, seed, &serde_json::to_vec(config)?))
}

fn with_provenance(mut v: serde_json::Value, p: &Provenance) -> String {
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("provenance".into(), p.json());
    }
    serde_json::to_string_pretty(&v).expect("JSON value") + "\n"
}

fn append_header_provenance(ws: &Workspace, cube: &Path, p: &Provenance) -> CmdResult {
    let (hdr, _) = paths_for(&ws.resolve(cube)?);
    let mut f = OpenOptions::new()
        .append(true)
        .open(&hdr)
        .map_err(|e| Failure::Internal(format!("cannot reopen {}: {e}", hdr.display())))?;
    writeln!(f, "provenance = {{{}}}", p.line()).map_err(|e| Failure::Internal(e.to_string()))
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Raw cube (header path).
    #[arg(long)]
    pub raw: PathBuf,
    /// White reference cube, full size or a single line.
    #[arg(long)]
    pub white: PathBuf,
    /// Dark reference cube, full size or a single line.
    #[arg(long)]
    pub dark: PathBuf,
    /// Output float32 reflectance cube.
    #[arg(long, default_value = "calibrated.hdr")]
    pub out: PathBuf,
    /// Scaling constant m applied to the reflectance.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

pub fn calibrate(ws: &Workspace, seed: u64, a: &CalibrateArgs) -> CmdResult {
    let raw = load_cube(ws.resolve(&a.raw)?)?;
    let refs = ReferenceFrames {
        white: load_cube(ws.resolve(&a.white)?)?,
        dark: load_cube(ws.resolve(&a.dark)?)?,
    };
    let cal = flat_field(&raw, &refs, a.scale)?;
    let out = ws.output(&a.out)?;
    save_calibrated(&cal, &out)?;
    append_header_provenance(ws, &a.out, &provenance("calibrate", seed, a)?)?;
    let total = cal.lines() * cal.samples() * cal.bands();
    println!(
        "calibrated {} of {total} elements -> {}",
        cal.valid_count(),
        ws.display(&out)
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    /// Cube to search: calibrated (float32) or raw (uint16).
    #[arg(long)]
    pub cube: PathBuf,
    /// Raw cube whose saturated pixels are ignored and counted per well.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAT_LEVEL)]
    pub sat_level: u16,
    /// Expected number of wells; enables parameter auto-tuning.
    #[arg(long)]
    pub expected: Option<usize>,
    #[arg(long, default_value_t = 8.0)]
    pub r_min: f64,
    #[arg(long, default_value_t = 40.0)]
    pub r_max: f64,
    /// Minimum fraction of the perimeter covered by edges.
    #[arg(long, default_value_t = 0.6)]
    pub threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    pub min_dist: f64,
    /// Edge cut-off as a fraction of the strongest gradient.
    #[arg(long, default_value_t = 0.2)]
    pub edge_threshold: f64,
    #[arg(long, default_value = "rois.json")]
    pub out: PathBuf,
}

enum AnyCube {
    Raw(hyperchar::hypercube::Hypercube),
    Calibrated(hyperchar::hypercube::CalibratedCube),
}

fn load_any(path: &Path) -> CmdResult<AnyCube> {
    let (hdr, _) = paths_for(path);
    let text = std::fs::read_to_string(&hdr)
        .map_err(|e| Failure::User(format!("cannot read {}: {e}", hdr.display())))?;
    Ok(match parse_header(&text)?.data_type {
        DataType::U16 => AnyCube::Raw(load_cube(path)?),
        DataType::F32 => AnyCube::Calibrated(load_calibrated(path)?),
    })
}

pub fn detect(ws: &Workspace, seed: u64, a: &DetectArgs) -> CmdResult {
    let cube = load_any(&ws.resolve(&a.cube)?)?;
    let raw = a
        .raw
        .as_ref()
        .map(|p| ws.resolve(p).and_then(|p| Ok(load_cube(p)?)))
        .transpose()?;
    let img = match (&cube, &raw) {
        (AnyCube::Raw(c), Some(r)) => detection_image(c, r, a.sat_level)?,
        (AnyCube::Raw(c), None) => detection_image(c, c, a.sat_level)?,
        (AnyCube::Calibrated(c), Some(r)) => detection_image(c, r, a.sat_level)?,
        (AnyCube::Calibrated(c), None) => project_gray(c),
    };
    let params = HoughParams {
        r_min: a.r_min,
        r_max: a.r_max,
        accumulator_threshold: a.threshold,
        min_center_dist: a.min_dist,
        edge_threshold: a.edge_threshold,
    };
    let mut set = match a.expected {
        Some(n) => auto_tune(&img, n, &params)?.0,
        None => detect_circles(&img, &params)?,
    };
    if set.is_empty() {
        return Err(Failure::User("no circles found".into()));
    }
    if let Some(r) = &raw {
        set = build_masks(&set, r, a.sat_level)?;
    }
    let p = provenance("detect", seed, a)?;
    let out = ws.output(&a.out)?;
    ws.write(
        &out,
        with_provenance(serde_json::from_str(&set.to_json()?)?, &p).as_bytes(),
    )?;
    println!("found {} circles -> {}", set.len(), ws.display(&out));
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// Calibrated cube (float32).
    #[arg(long)]
    pub cube: PathBuf,
    /// Raw cube the calibrated one came from, for saturation masks.
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long, default_value = "rois.json")]
    pub rois: PathBuf,
    /// Acquisition time, hours since the start of the experiment.
    #[arg(long)]
    pub time: f64,
    /// Series CSV to append to; created when missing.
    #[arg(long, default_value = "series/intensity.csv")]
    pub csv: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAT_LEVEL)]
    pub sat_level: u16,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn load_store(ws: &Workspace, csv: &Path) -> CmdResult<SeriesStore> {
    let mut store = SeriesStore::parse_csv(&ws.read_string(csv)?)?;
    let side = ws.resolve(&sidecar_path(csv))?;
    if side.exists() {
        store.apply_sidecar(&ws.read_string(&side)?)?;
    }
    Ok(store)
}

pub fn extract(ws: &Workspace, seed: u64, a: &ExtractArgs) -> CmdResult {
    let cal = load_calibrated(ws.resolve(&a.cube)?)?;
    let raw = load_cube(ws.resolve(&a.raw)?)?;
    let rois = RoiSet::from_json(&ws.read_string(&a.rois)?)?;
    let masks = build_masks(&rois, &raw, a.sat_level)?;
    let ex = extract_intensity(&cal, &masks)?;
    let csv = ws.output(&a.csv)?;
    let mut store = if csv.exists() {
        load_store(ws, &csv)?
    } else {
        SeriesStore::new()
    };
    store.append_measurement(&ex.readings, a.time)?;
    store.write_csv(&csv)?;
    let p = provenance("extract", seed, a)?;
    let side = store.sidecar_json(Some(p.json()))?;
    ws.write(&sidecar_path(&csv), (side + "\n").as_bytes())?;
    for s in &ex.skipped {
        eprintln!("warning: well {} skipped: {}", s.sample, s.reason);
    }
    println!(
        "appended {} wells at t = {} h -> {}",
        ex.readings.len(),
        a.time,
        ws.display(&csv)
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingArg {
    /// Plain sum of squared residuals.
    Uniform,
    /// Residuals relative to the observed intensity.
    Relative,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::Uniform => Weighting::Uniform,
            WeightingArg::Relative => Weighting::Relative,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, default_value = "series/intensity.csv")]
    pub csv: PathBuf,
    /// Well index to fit; repeat for several. All wells by default.
    #[arg(long = "sample")]
    pub samples: Vec<usize>,
    #[arg(long, default_value = "fits")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = WeightingArg::Uniform)]
    pub weighting: WeightingArg,
    /// Total-life threshold as a fraction of the initial amplitude.
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// Skip the SVG plots.
    #[arg(long)]
    pub no_plots: bool,
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.prec$}"))
}

fn fit_curves<'a>(fit: &'a WellFit) -> Vec<Curve<'a>> {
    let mut curves = Vec::new();
    if let Some(e) = &fit.exp {
        curves.push(Curve {
            label: format!("exponential, t1/2 = {} h", fmt_opt(e.half_life(), 2)),
            color: "#d62728",
            dashed: false,
            f: Box::new(move |t| e.predict(t)),
        });
    }
    if let Some(a) = &fit.adv {
        curves.push(Curve {
            label: format!("advanced, life = {:.1} h", a.total_life()),
            color: "#1f77b4",
            dashed: true,
            f: Box::new(move |t| a.predict(t)),
        });
    }
    curves
}

fn series_points(s: &IntensitySeries, label: &str, color: &'static str, hollow: bool) -> Points {
    Points {
        label: label.into(),
        color,
        xy: s.points().iter().map(|p| (p.t, p.intensity)).collect(),
        hollow,
    }
}

pub fn fit_plot(s: &IntensitySeries, fit: &WellFit, p: &Provenance) -> String {
    Plot {
        title: format!("{} intensity decay", s.sample.label),
        x_label: "time (h)".into(),
        y_label: "intensity".into(),
        points: vec![series_points(s, "measured", "#333333", false)],
        curves: fit_curves(fit),
    }
    .render(&p.line())
}

fn write_fit_outputs(
    ws: &Workspace,
    dir: &Path,
    store: &SeriesStore,
    fits: &[WellFit],
    p: &Provenance,
    plots: bool,
) -> CmdResult {
    let dir = ws
        .output(&dir.join("summary.json"))?
        .parent()
        .expect("has parent")
        .to_path_buf();
    write_fits(&dir, fits, &Some(p.json()))?;
    if plots {
        for f in fits {
            if let Some(s) = store.get(f.sample) {
                ws.write(
                    &dir.join(format!("well_{:02}.svg", f.sample)),
                    fit_plot(s, f, p).as_bytes(),
                )?;
            }
        }
    }
    Ok(())
}

fn print_fit_table(fits: &[WellFit]) {
    println!(
        "{:<6} {:>4} {:>9} {:>12} {:>12} {:>8} {:>8} {:>10} {:>10}",
        "well",
        "N",
        "selected",
        "t1/2 exp h",
        "life adv h",
        "R2 exp",
        "R2 adv",
        "AIC exp",
        "AIC adv"
    );
    for f in fits {
        let s = f.summary();
        println!(
            "{:<6} {:>4} {:>9} {:>12} {:>12} {:>8} {:>8} {:>10} {:>10}",
            s.label,
            s.points,
            s.selected.map_or("-", |m| m.tag()),
            fmt_opt(s.half_life_h, 3),
            fmt_opt(s.total_life_adv_h, 2),
            fmt_opt(s.r2_exp, 4),
            fmt_opt(s.r2_adv, 4),
            fmt_opt(s.aic_exp, 4),
            fmt_opt(s.aic_adv, 4),
        );
        if let Some(e) = &f.error {
            println!("       {e}");
        }
    }
}

pub fn fit(ws: &Workspace, seed: u64, a: &FitArgs) -> CmdResult {
    let bytes = ws.read(&a.csv)?;
    let full = load_store(ws, &a.csv)?;
    let mut store = SeriesStore::new();
    for s in full
        .iter()
        .filter(|s| a.samples.is_empty() || a.samples.contains(&s.sample.index))
    {
        store.insert(s.clone());
    }
    if let Some(missing) = a.samples.iter().find(|i| full.get(**i).is_none()) {
        return Err(Failure::User(format!(
            "sample {missing} is not in {}",
            a.csv.display()
        )));
    }
    if store.is_empty() {
        return Err(Failure::User(format!(
            "{} holds no series",
            a.csv.display()
        )));
    }
    let opts = FitOptions {
        seed,
        theta: a.theta,
        weighting: a.weighting.into(),
        ..FitOptions::default()
    };
    let p = provenance(
        "fit",
        seed,
        &serde_json::json!({ "args": a, "input_sha256": sha256_hex(&bytes) }),
    )?;
    let fits = fit_store(&store, &opts);
    write_fit_outputs(ws, &a.out_dir, &store, &fits, &p, !a.no_plots)?;
    print_fit_table(&fits);
    println!("(AIC and MDL use the natural logarithm)");
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// Dense series CSV to replay.
    #[arg(long, default_value = "series/intensity.csv")]
    pub csv: PathBuf,
    /// Well to replay; required when the CSV holds several.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Sampler settings as TOML keys (rate_c, epsilon, gain_g, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial sampling interval, hours.
    #[arg(long, default_value_t = 1.0)]
    pub dt0: f64,
    #[arg(long, default_value = "replay")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct FitBrief {
    half_life_h: Option<f64>,
    total_life_h: f64,
    r_squared: f64,
    params: hyperchar::models::ModelParams,
}

impl From<&FitResult> for FitBrief {
    fn from(f: &FitResult) -> Self {
        Self {
            half_life_h: f.half_life(),
            total_life_h: f.total_life(),
            r_squared: f.r_squared,
            params: f.params,
        }
    }
}

#[derive(Debug, Serialize)]
struct ReplayReport {
    sample: usize,
    dense_points: usize,
    selected_points: usize,
    fraction: f64,
    selected_times_h: Vec<f64>,
    full_fit: Option<FitBrief>,
    subset_fit: Option<FitBrief>,
    half_life_relative_difference: Option<f64>,
    sampler: SamplerConfig,
    dt0_h: f64,
}

pub fn replay(ws: &Workspace, seed: u64, a: &ReplayArgs) -> CmdResult {
    let bytes = ws.read(&a.csv)?;
    let store = load_store(ws, &a.csv)?;
    let series = match a.sample {
        Some(i) => store
            .get(i)
            .ok_or_else(|| Failure::User(format!("sample {i} is not in {}", a.csv.display())))?,
        None if store.len() == 1 => store.iter().next().expect("one series"),
        None => {
            let ids: Vec<String> = store.iter().map(|s| s.sample.index.to_string()).collect();
            return Err(Failure::User(format!(
                "--sample is required; the CSV holds samples {}",
                ids.join(", ")
            )));
        }
    };
    let cfg: SamplerConfig = match &a.config {
        Some(p) => toml::from_str(&ws.read_string(p)?)
            .map_err(|e| Failure::User(format!("{}: {e}", p.display())))?,
        None => SamplerConfig::default(),
    };
    let r = replay_series(series, &cfg, a.dt0)?;
    let subset = series.subset(&r.selected)?;
    let opts = FitOptions {
        seed,
        ..FitOptions::default()
    };
    let full = fit_exponential_with(series, &opts).ok();
    let part = fit_exponential_with(&subset, &opts).ok();
    let diff = match (
        full.as_ref().and_then(FitResult::half_life),
        part.as_ref().and_then(FitResult::half_life),
    ) {
        (Some(f), Some(s)) => Some((s - f).abs() / f),
        _ => None,
    };
    let report = ReplayReport {
        sample: series.sample.index,
        dense_points: series.len(),
        selected_points: r.selected.len(),
        fraction: r.fraction(series.len()),
        selected_times_h: subset.times(),
        full_fit: full.as_ref().map(FitBrief::from),
        subset_fit: part.as_ref().map(FitBrief::from),
        half_life_relative_difference: diff,
        sampler: cfg,
        dt0_h: a.dt0,
    };
    let p = provenance(
        "replay",
        seed,
        &serde_json::json!({ "args": a, "sampler": cfg, "input_sha256": sha256_hex(&bytes) }),
    )?;
    let stem = format!("well_{:02}", series.sample.index);
    ws.write(
        &a.out_dir.join(format!("{stem}.json")),
        with_provenance(serde_json::to_value(&report)?, &p).as_bytes(),
    )?;
    ws.write(
        &a.out_dir.join(format!("{stem}.schedule.jsonl")),
        r.log_jsonl()?.as_bytes(),
    )?;
    let mut sub_store = SeriesStore::new();
    sub_store.insert(subset.clone());
    ws.write(
        &a.out_dir.join(format!("{stem}.subset.csv")),
        sub_store.to_csv_string()?.as_bytes(),
    )?;

    let mut curves = Vec::new();
    if let Some(f) = &full {
        curves.push(Curve {
            label: format!("fit, all points (t1/2 {} h)", fmt_opt(f.half_life(), 2)),
            color: "#7f7f7f",
            dashed: true,
            f: Box::new(move |t| f.predict(t)),
        });
    }
    if let Some(f) = &part {
        curves.push(Curve {
            label: format!("fit, selected (t1/2 {} h)", fmt_opt(f.half_life(), 2)),
            color: "#d62728",
            dashed: false,
            f: Box::new(move |t| f.predict(t)),
        });
    }
    let svg = Plot {
        title: format!(
            "{} sampler replay: {} of {} points",
            series.sample.label,
            r.selected.len(),
            series.len()
        ),
        x_label: "time (h)".into(),
        y_label: "intensity".into(),
        points: vec![
            series_points(series, "dense series", "#bbbbbb", false),
            series_points(&subset, "selected", "#d62728", true),
        ],
        curves,
    }
    .render(&p.line());
    ws.write(&a.out_dir.join(format!("{stem}.svg")), svg.as_bytes())?;

    println!(
        "selected {} of {} points ({:.1}%); half-life all = {} h, selected = {} h",
        r.selected.len(),
        series.len(),
        100.0 * report.fraction,
        fmt_opt(full.as_ref().and_then(FitResult::half_life), 3),
        fmt_opt(part.as_ref().and_then(FitResult::half_life), 3),
    );
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Campaign configuration (TOML); the bundled demo campaign when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Replay recorded frames (white.hdr, dark.hdr and frame headers) instead of the synthetic scene.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Skip the SVG plots.
    #[arg(long)]
    pub no_plots: bool,
}

pub fn simulate(ws: &Workspace, seed: Option<u64>, a: &SimulateArgs) -> CmdResult {
    let text = match &a.config {
        Some(p) => ws.read_string(p)?,
        None => DEMO_CONFIG.to_string(),
    };
    let mut cfg = StationConfig::from_toml(&text)?;
    if let Some(seed) = seed {
        cfg.campaign.seed = seed;
        if let Some(scene) = &mut cfg.scene {
            scene.seed = seed;
        }
    }
    if let Some(n) = a.iterations {
        cfg.campaign.max_iterations = n;
    }
    cfg.validate()?;
    let effective = cfg.to_toml()?;
    ws.write(Path::new("config.toml"), effective.as_bytes())?;
    let p = Provenance::new("simulate", cfg.campaign.seed, effective.as_bytes());

    let mut source: Box<dyn FrameSource> = match (&a.frames, &cfg.scene) {
        (Some(dir), _) => Box::new(CubeDirectory::open(&ws.resolve(dir)?)?),
        (None, Some(scene)) => Box::new(SynthSource {
            scene: scene.clone(),
        }),
        (None, None) => {
            return Err(Failure::User(
                "the configuration has no [scene]; pass --frames".into(),
            ))
        }
    };
    let opts = CampaignOptions {
        fit: FitOptions {
            seed: cfg.campaign.seed,
            ..FitOptions::default()
        },
        provenance: Some(p.json()),
    };
    let out = run_campaign_with(&cfg, source.as_mut(), ws.root(), &opts)?;
    if !a.no_plots {
        for f in &out.fits {
            if let Some(s) = out.store.get(f.sample) {
                ws.write(
                    &Path::new("fits").join(format!("well_{:02}.svg", f.sample)),
                    fit_plot(s, f, &p).as_bytes(),
                )?;
            }
        }
    }
    println!(
        "{} iterations, {} measurements, {} skipped, program success rate {:.2}%",
        out.iterations,
        out.stats.measurements,
        out.stats.skipped_iterations,
        100.0 * out.stats.success_rate()
    );
    print_fit_table(&out.fits);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Fit summary written by `fit` or `simulate`.
    #[arg(long, default_value = "fits/summary.json")]
    pub summary: PathBuf,
    /// Series sidecar; wells sharing polymer and pH metadata form replicate groups.
    #[arg(long, default_value = "series/intensity.json")]
    pub sidecar: PathBuf,
    /// Group consecutive wells into replicate groups of this size instead.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Output stem; writes `<out>.md` and `<out>.json`.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Deserialize)]
struct SummaryFile {
    wells: Vec<FitSummary>,
}

#[derive(Debug, Serialize)]
struct GroupRow {
    group: String,
    wells: Vec<String>,
    n: usize,
    mean_half_life_h: f64,
    std_h: f64,
    ci95_half_width_h: f64,
}

fn metadata_groups(ws: &Workspace, sidecar: &Path) -> CmdResult<BTreeMap<String, Vec<usize>>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let path = ws.resolve(sidecar)?;
    if !path.exists() {
        return Ok(groups);
    }
    let v: serde_json::Value = serde_json::from_str(&ws.read_string(&path)?)?;
    for s in v["samples"].as_array().into_iter().flatten() {
        let (Some(index), Some(polymer)) = (s["index"].as_u64(), s["meta"]["polymer"].as_str())
        else {
            continue;
        };
        let key = match s["meta"]["ph"].as_f64() {
            Some(ph) => format!("{polymer} pH {ph}"),
            None => polymer.to_string(),
        };
        groups.entry(key).or_default().push(index as usize);
    }
    Ok(groups)
}

pub fn report(ws: &Workspace, seed: u64, a: &ReportArgs) -> CmdResult {
    let bytes = ws.read(&a.summary)?;
    let summary: SummaryFile = serde_json::from_slice(&bytes)?;
    let groups: Vec<(String, Vec<usize>)> = match a.group_size {
        Some(0) => return Err(Failure::User("--group-size must be at least 1".into())),
        Some(n) => summary
            .wells
            .chunks(n)
            .enumerate()
            .map(|(i, c)| (format!("G{}", i + 1), c.iter().map(|w| w.sample).collect()))
            .collect(),
        None => metadata_groups(ws, &a.sidecar)?.into_iter().collect(),
    };
    let by_sample: BTreeMap<usize, &FitSummary> =
        summary.wells.iter().map(|w| (w.sample, w)).collect();
    let mut rows = Vec::new();
    for (name, members) in &groups {
        let found: Vec<&FitSummary> = members
            .iter()
            .filter_map(|i| by_sample.get(i).copied())
            .collect();
        let hl: Vec<f64> = found.iter().filter_map(|w| w.half_life_h).collect();
        if let Ok(st) = replicate_stats(&hl) {
            rows.push(GroupRow {
                group: name.clone(),
                wells: found.iter().map(|w| w.label.clone()).collect(),
                n: st.n,
                mean_half_life_h: st.mean,
                std_h: st.std,
                ci95_half_width_h: st.ci95_half_width,
            });
        }
    }

    let p = provenance(
        "report",
        seed,
        &serde_json::json!({ "args": a, "input_sha256": sha256_hex(&bytes) }),
    )?;
    let mut md = format!("<!-- {} -->\n# Degradation report\n\n", p.line());
    md.push_str("AIC and MDL are computed with the natural logarithm on max-normalised residuals; lower is better.\n\n");
    md.push_str("| Well | N | Selected | t1/2 exp (h) | Life exp (h) | Life adv (h) | R2 exp | R2 adv | AIC exp | AIC adv | MDL exp | MDL adv |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for w in &summary.wells {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            w.label,
            w.points,
            w.selected.map_or("-", |m| m.tag()),
            fmt_opt(w.half_life_h, 3),
            fmt_opt(w.total_life_exp_h, 2),
            fmt_opt(w.total_life_adv_h, 2),
            fmt_opt(w.r2_exp, 4),
            fmt_opt(w.r2_adv, 4),
            fmt_opt(w.aic_exp, 4),
            fmt_opt(w.aic_adv, 4),
            fmt_opt(w.mdl_exp, 4),
            fmt_opt(w.mdl_adv, 4),
        ));
    }
    if !rows.is_empty() {
        md.push_str("\n## Replicate groups\n\nHalf-width is 2 sample standard deviations.\n\n");
        md.push_str("| Group | Wells | n | Mean t1/2 (h) | SD (h) | ±95% (h) |\n|---|---|---|---|---|---|\n");
        for r in &rows {
            md.push_str(&format!(
                "| {} | {} | {} | {:.3} | {:.3} | {:.3} |\n",
                r.group,
                r.wells.join(" "),
                r.n,
                r.mean_half_life_h,
                r.std_h,
                r.ci95_half_width_h
            ));
        }
    }
    let json = with_provenance(
        serde_json::json!({ "log_base": "e", "wells": summary.wells, "groups": rows }),
        &p,
    );
    let stem = a.out.to_string_lossy().to_string();
    ws.write(Path::new(&format!("{stem}.md")), md.as_bytes())?;
    ws.write(Path::new(&format!("{stem}.json")), json.as_bytes())?;
    print!("{md}");
    Ok(())
}
