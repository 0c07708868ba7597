//! Desk-scale automation station: simulated devices driven by programs,
//! scan geometry, a simulated clock and an append-only run ledger.

mod campaign;
mod config;
mod device;
mod geometry;
mod ledger;
mod program;

pub use campaign::{
    fit_store, run_campaign, run_campaign_with, write_fits, CampaignOptions, CampaignOutcome,
    CubeDirectory, FitSummary, FrameSource, SynthSource, WellFit,
};
pub use config::{CampaignSettings, ProgramSlot, Sampling, StationConfig, DEMO_CONFIG};
pub use device::{
    Device, DeviceSpec, DurationName, Registry, SimClock, StepDuration, Transition, TICK_HOURS,
};
pub use geometry::{camera_distance, scan_velocity, ScanGeometry};
pub use ledger::{Record, RunLedger, RunStats};
pub use program::{run_program, validate_program, DeviceAction, Program, ProgramOutcome, Station};

#[cfg(test)]
mod tests;
