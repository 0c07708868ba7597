//! Programs: ordered device actions run as one sequential state machine.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::device::{DurationName, Registry, SimClock, StepDuration};
use super::geometry::{scan_velocity, ScanGeometry};
use super::ledger::{Record, RunLedger};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAction {
    pub device: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub steps: Vec<DeviceAction>,
}

/// Mutable station state shared by the programs of one campaign.
pub struct Station<'a, R> {
    pub devices: &'a mut Registry,
    pub clock: &'a mut SimClock,
    pub rng: &'a mut R,
    pub ledger: &'a mut RunLedger,
    pub geometry: &'a ScanGeometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramOutcome {
    pub ok: bool,
    /// Simulated time when the program started, hours.
    pub started: f64,
    pub failure: Option<String>,
    /// Whether the plate lid was on when the program ended (before any reset).
    pub lid_on: bool,
}

fn duration_seconds(d: StepDuration, geometry: &ScanGeometry) -> Result<f64> {
    match d {
        StepDuration::Seconds(s) => Ok(s),
        StepDuration::Named(DurationName::Scan) => geometry.scan_seconds(),
    }
}

/// Checks every step against the registry by dry-running the state
/// machines from their home states; the program must leave every device home.
pub fn validate_program(p: &Program, devices: &Registry, geometry: &ScanGeometry) -> Result<()> {
    let err = |m: String| Err(Error::Config(format!("program {}: {m}", p.id)));
    if devices.is_empty() {
        return err("the device registry is empty".into());
    }
    if p.steps.is_empty() {
        return err("no steps".into());
    }
    let mut dry = devices.clone();
    dry.reset_all();
    for (i, s) in p.steps.iter().enumerate() {
        let Some(dev) = dry.get_mut(&s.device) else {
            return err(format!("step {}: unknown device {}", i + 1, s.device));
        };
        if !dev.spec.has_action(&s.action) {
            return err(format!(
                "step {}: device {} has no action {}",
                i + 1,
                s.device,
                s.action
            ));
        }
        let Some(t) = dev.spec.transition(&s.action, dev.state()) else {
            return err(format!(
                "step {}: {}.{} is not allowed from state {}",
                i + 1,
                s.device,
                s.action,
                dev.state()
            ));
        };
        duration_seconds(t.duration, geometry)?;
        dev.transition(&s.action).map_err(Error::Config)?;
    }
    if let Some(d) = dry.iter().find(|d| !d.is_home()) {
        return err(format!(
            "device {} ends in state {} instead of home {}",
            d.name,
            d.state(),
            d.spec.home
        ));
    }
    Ok(())
}

/// Runs `p` step by step. On a failure the program aborts, a failure record
/// is written and every device is commanded home.
pub fn run_program<R: Rng>(
    p: &Program,
    st: &mut Station<'_, R>,
    iteration: usize,
    attempt: usize,
) -> Result<ProgramOutcome> {
    validate_program(p, st.devices, st.geometry)?;
    if !st.devices.all_home() {
        return Err(Error::Contract(format!(
            "program {}: devices are not in their home states",
            p.id
        )));
    }
    let started = st.clock.now();
    for (i, s) in p.steps.iter().enumerate() {
        let dev = st.devices.get_mut(&s.device).expect("validated");
        let from = dev.state().to_string();
        let planned = dev
            .spec
            .transition(&s.action, &from)
            .expect("validated")
            .duration;
        let seconds = duration_seconds(planned, st.geometry)?;
        let result = dev.apply(&s.action, st.rng);
        let t = st.clock.advance_seconds(seconds);
        match result {
            Ok(tr) => {
                let mut params = s.params.clone();
                if s.action == "linear_scan" {
                    let v = scan_velocity(st.geometry)?;
                    let mut obj = params
                        .and_then(|v| v.as_object().cloned())
                        .unwrap_or_default();
                    obj.insert("velocity_mm_s".into(), serde_json::json!(v));
                    params = Some(serde_json::Value::Object(obj));
                }
                st.ledger.append(Record::Step {
                    t,
                    program: p.id.clone(),
                    iteration,
                    attempt,
                    step: i + 1,
                    device: s.device.clone(),
                    action: s.action.clone(),
                    from,
                    to: tr.to,
                    params,
                })?;
            }
            Err(reason) => {
                let lid_on = st.devices.lid_on();
                st.ledger.append(Record::Failure {
                    t,
                    program: p.id.clone(),
                    iteration,
                    attempt,
                    step: i + 1,
                    device: s.device.clone(),
                    action: s.action.clone(),
                    reason: reason.clone(),
                    lid_on,
                })?;
                st.devices.reset_all();
                let t = st.clock.tick();
                st.ledger.append(Record::Program {
                    t,
                    program: p.id.clone(),
                    iteration,
                    attempt,
                    ok: false,
                })?;
                return Ok(ProgramOutcome {
                    ok: false,
                    started,
                    failure: Some(reason),
                    lid_on,
                });
            }
        }
    }
    let lid_on = st.devices.lid_on();
    let t = st.clock.tick();
    st.ledger.append(Record::Program {
        t,
        program: p.id.clone(),
        iteration,
        attempt,
        ok: true,
    })?;
    Ok(ProgramOutcome {
        ok: true,
        started,
        failure: None,
        lid_on,
    })
}
