//! Station configuration file (TOML).
//!
//! ```toml
//! [campaign]
//! name = "demo"
//! seed = 7
//! max_iterations = 33
//! imaging_program = "imaging"
//! programs = [{ id = "imaging" }]
//!
//! [sampling]
//! mode = "fixed"        # or "adaptive" with dt0_h and a [sampling.sampler] table
//! interval_h = 2.0
//!
//! [devices.camera]
//! home = "idle"
//! transitions = [{ action = "capture", from = "idle", to = "idle", duration_s = 5 }]
//!
//! [programs.imaging]
//! steps = [{ device = "camera", action = "capture" }]
//! ```
//!
//! Optional tables: `[geometry]` (scan geometry), `[detection]` (initial
//! Hough parameters) and `[scene]` (synthetic scene).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::device::{DeviceSpec, Registry};
use super::geometry::ScanGeometry;
use super::program::{validate_program, Program};
use crate::error::{Error, Result};
use crate::roi::{HoughParams, DEFAULT_SAT_LEVEL};
use crate::sampler::SamplerConfig;
use crate::synth::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramSlot {
    pub id: String,
    /// Run on every `every`-th iteration.
    #[serde(default = "one")]
    pub every: usize,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_sat() -> u16 {
    DEFAULT_SAT_LEVEL
}

fn default_name() -> String {
    "campaign".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSettings {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub max_iterations: usize,
    pub programs: Vec<ProgramSlot>,
    /// Program after whose success a frame is acquired.
    pub imaging_program: String,
    /// Well count handed to ROI auto-tuning; defaults to the scene's plate.
    #[serde(default)]
    pub expected_wells: Option<usize>,
    #[serde(default = "yes")]
    pub save_frames: bool,
    #[serde(default = "default_sat")]
    pub sat_level: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum Sampling {
    Fixed {
        interval_h: f64,
    },
    Adaptive {
        dt0_h: f64,
        #[serde(default)]
        sampler: SamplerConfig,
    },
}

impl Sampling {
    pub fn validate(&self) -> Result<()> {
        match self {
            Sampling::Fixed { interval_h } if !(*interval_h > 0.0 && interval_h.is_finite()) => {
                Err(Error::Config(format!(
                    "sampling.interval_h must be positive, got {interval_h}"
                )))
            }
            Sampling::Adaptive { dt0_h, sampler } => {
                sampler.validate()?;
                if !(*dt0_h >= sampler.b_l && *dt0_h <= sampler.b_u) {
                    return Err(Error::Config(format!(
                        "sampling.dt0_h = {dt0_h} must lie within [b_l, b_u] = [{}, {}]",
                        sampler.b_l, sampler.b_u
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub campaign: CampaignSettings,
    pub sampling: Sampling,
    #[serde(default)]
    pub geometry: ScanGeometry,
    #[serde(default)]
    pub detection: HoughParams,
    pub devices: BTreeMap<String, DeviceSpec>,
    pub programs: BTreeMap<String, Program>,
    #[serde(default)]
    pub scene: Option<Scene>,
}

impl StationConfig {
    /// Parses and validates a configuration. Syntax errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: StationConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (id, p) in cfg.programs.iter_mut() {
            p.id = id.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn registry(&self) -> Result<Registry> {
        Registry::from_specs(&self.devices)
    }

    pub fn expected_wells(&self) -> Option<usize> {
        self.campaign
            .expected_wells
            .or_else(|| self.scene.as_ref().map(Scene::well_count))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.campaign;
        if c.max_iterations == 0 {
            return Err(Error::Config(
                "campaign.max_iterations must be at least 1".into(),
            ));
        }
        if c.programs.is_empty() {
            return Err(Error::Config("campaign.programs is empty".into()));
        }
        if !c.programs.iter().any(|s| s.id == c.imaging_program) {
            return Err(Error::Config(format!(
                "campaign.imaging_program {} is not among campaign.programs",
                c.imaging_program
            )));
        }
        self.geometry
            .validate()
            .map_err(|e| Error::Config(format!("geometry: {e}")))?;
        self.detection
            .validate()
            .map_err(|e| Error::Config(format!("detection: {e}")))?;
        self.sampling.validate()?;
        let registry = self.registry()?;
        for slot in &c.programs {
            if slot.every == 0 {
                return Err(Error::Config(format!(
                    "campaign.programs {}: every must be >= 1",
                    slot.id
                )));
            }
            let p = self.programs.get(&slot.id).ok_or_else(|| {
                Error::Config(format!("campaign.programs: unknown program {}", slot.id))
            })?;
            validate_program(p, &registry, &self.geometry)?;
        }
        if let Some(s) = &self.scene {
            s.validate()?;
        }
        if self.expected_wells() == Some(0) {
            return Err(Error::Config("expected_wells must be positive".into()));
        }
        Ok(())
    }
}

/// The bundled demo configuration: a 24-well synthetic plate imaged every
/// 2 h for 33 iterations.
pub const DEMO_CONFIG: &str = include_str!("demo.toml");
