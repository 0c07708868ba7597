use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::models::{ExpParams, ModelParams};
use crate::synth::{PlateLayout, Scene};

fn demo() -> StationConfig {
    StationConfig::from_toml(DEMO_CONFIG).unwrap()
}

fn run(
    cfg: &StationConfig,
    registry: &mut Registry,
    seed: u64,
) -> (ProgramOutcome, RunLedger, SimClock) {
    let mut clock = SimClock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledger = RunLedger::in_memory();
    let mut st = Station {
        devices: registry,
        clock: &mut clock,
        rng: &mut rng,
        ledger: &mut ledger,
        geometry: &cfg.geometry,
    };
    let o = run_program(&cfg.programs["imaging"], &mut st, 0, 0).unwrap();
    (o, ledger, clock)
}

#[test]
fn imaging_program_runs_every_step() {
    let cfg = demo();
    let mut reg = cfg.registry().unwrap();
    let (o, ledger, clock) = run(&cfg, &mut reg, 1);
    assert!(o.ok);
    let steps: Vec<_> = ledger
        .records()
        .iter()
        .filter(|r| matches!(r, Record::Step { .. }))
        .collect();
    assert_eq!(steps.len(), 6);
    assert!(reg.all_home());
    assert!(matches!(
        ledger.records().last(),
        Some(Record::Program { ok: true, .. })
    ));
    // 20 + 30 + scan + 5 + 30 + 20 seconds plus one bookkeeping tick.
    let scan = cfg.geometry.scan_seconds().unwrap();
    let expected = (105.0 + scan) / 3600.0 + TICK_HOURS;
    assert!((clock.now() - expected).abs() < 1e-12);
    match steps[2] {
        Record::Step {
            params: Some(p), ..
        } => {
            let v = p["velocity_mm_s"].as_f64().unwrap();
            assert!((v - scan_velocity(&cfg.geometry).unwrap()).abs() < 1e-12);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn gripper_failure_aborts_with_lid_on() {
    let mut cfg = demo();
    cfg.devices.get_mut("gripper").unwrap().failure_probability = 1.0;
    let mut reg = cfg.registry().unwrap();
    let (o, ledger, _) = run(&cfg, &mut reg, 1);
    assert!(!o.ok);
    assert!(o.lid_on);
    let failures: Vec<_> = ledger
        .records()
        .iter()
        .filter(|r| matches!(r, Record::Failure { .. }))
        .collect();
    assert_eq!(failures.len(), 1);
    assert!(matches!(
        failures[0],
        Record::Failure {
            step: 1,
            lid_on: true,
            ..
        }
    ));
    assert!(!ledger
        .records()
        .iter()
        .any(|r| matches!(r, Record::Step { .. })));
    assert!(reg.all_home());
}

#[test]
fn failure_mid_program_returns_devices_home() {
    let mut cfg = demo();
    cfg.devices.get_mut("camera").unwrap().failure_probability = 1.0;
    let mut reg = cfg.registry().unwrap();
    let (o, ledger, _) = run(&cfg, &mut reg, 1);
    assert!(!o.ok);
    // The lid was off when the camera failed.
    assert!(!o.lid_on);
    assert!(matches!(
        ledger
            .records()
            .iter()
            .find(|r| matches!(r, Record::Failure { .. })),
        Some(Record::Failure {
            step: 4,
            lid_on: false,
            ..
        })
    ));
    assert!(reg.all_home());
}

#[test]
fn empty_registry_is_a_config_error() {
    let cfg = demo();
    let mut reg = Registry::from_specs(&BTreeMap::new()).unwrap();
    let mut clock = SimClock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ledger = RunLedger::in_memory();
    let mut st = Station {
        devices: &mut reg,
        clock: &mut clock,
        rng: &mut rng,
        ledger: &mut ledger,
        geometry: &cfg.geometry,
    };
    let err = run_program(&cfg.programs["imaging"], &mut st, 0, 0).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(ledger.is_empty());
}

#[test]
fn ledger_rejects_time_going_backwards() {
    let mut l = RunLedger::in_memory();
    l.append(Record::Skip {
        t: 1.0,
        iteration: 0,
        reason: "x".into(),
    })
    .unwrap();
    assert!(matches!(
        l.append(Record::Skip {
            t: 1.0,
            iteration: 1,
            reason: "x".into()
        }),
        Err(Error::Contract(_))
    ));
}

pub(super) fn tiny_config(iterations: usize) -> StationConfig {
    let mut cfg = demo();
    cfg.campaign.max_iterations = iterations;
    cfg.campaign.save_frames = false;
    cfg.scene = Some(Scene {
        lines: 70,
        samples: 100,
        bands: 16,
        layout: PlateLayout {
            rows: 2,
            cols: 3,
            radius: 12.0,
            pitch: 32.0,
            origin: None,
        },
        wells: vec![ModelParams::Exp(ExpParams {
            a: 6.0,
            k_d: 0.1,
            c: 1.5,
        })],
        background: 1.6,
        glare: None,
        sigma_rel: 0.02,
        well_sigma_rel: 0.01,
        white_level: 39321,
        dark_level: 512,
        seed: 3,
    });
    cfg.detection.r_min = 9.0;
    cfg.detection.r_max = 15.0;
    cfg
}

#[test]
fn small_campaign_writes_workspace() {
    let cfg = tiny_config(12);
    let dir = tempfile::tempdir().unwrap();
    let mut src = SynthSource {
        scene: cfg.scene.clone().unwrap(),
    };
    let out = run_campaign(&cfg, &mut src, dir.path()).unwrap();
    assert_eq!(out.store.len(), 6);
    assert!(out.store.iter().all(|s| s.len() == 12));
    assert_eq!(out.stats.measurements, 12);
    assert_eq!(out.stats.success_rate(), 1.0);
    for f in [
        "ledger.jsonl",
        "rois.json",
        "series/intensity.csv",
        "series/intensity.json",
        "fits/summary.json",
        "fits/well_00.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(
        RunLedger::load(&dir.path().join("ledger.jsonl")).unwrap(),
        out.records
    );
    for w in &out.fits {
        let hl = w.exp.as_ref().unwrap().half_life().unwrap();
        assert!((hl / (2f64.ln() / 0.1) - 1.0).abs() < 0.15, "{hl}");
    }
    // Measurements land on the fixed 2 h grid.
    let times = out.store.iter().next().unwrap().times();
    assert_eq!(times[3], 6.0);
}

#[test]
fn campaigns_are_deterministic() {
    let cfg = tiny_config(6);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let mut src = SynthSource {
            scene: cfg.scene.clone().unwrap(),
        };
        run_campaign(&cfg, &mut src, d.path()).unwrap();
    }
    for f in ["ledger.jsonl", "series/intensity.csv", "fits/summary.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn failed_imaging_is_retried_then_skipped() {
    let mut cfg = tiny_config(5);
    cfg.devices.get_mut("camera").unwrap().failure_probability = 1.0;
    let dir = tempfile::tempdir().unwrap();
    let mut src = SynthSource {
        scene: cfg.scene.clone().unwrap(),
    };
    let out = run_campaign(&cfg, &mut src, dir.path()).unwrap();
    let skips = out
        .records
        .iter()
        .filter(|r| matches!(r, Record::Skip { .. }))
        .count();
    assert_eq!(skips, 5);
    let imaging_runs = out
        .records
        .iter()
        .filter(|r| matches!(r, Record::Program { program, .. } if program == "imaging"))
        .count();
    assert_eq!(imaging_runs, 10);
    assert_eq!(out.stats.measurements, 0);
    assert!(out.store.is_empty());
}

#[test]
fn adaptive_campaign_stops_when_flat() {
    let mut cfg = tiny_config(200);
    cfg.sampling = Sampling::Adaptive {
        dt0_h: 1.0,
        sampler: crate::sampler::SamplerConfig {
            epsilon: Some(0.2),
            ..Default::default()
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let mut src = SynthSource {
        scene: cfg.scene.clone().unwrap(),
    };
    let out = run_campaign(&cfg, &mut src, dir.path()).unwrap();
    assert!(
        matches!(out.records.last(), Some(Record::Stop { .. })),
        "{:?}",
        out.records.last()
    );
    assert!(out.iterations < 200);
    let times = out.store.iter().next().unwrap().times();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}
