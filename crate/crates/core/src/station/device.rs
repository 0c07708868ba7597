//! Simulated devices as explicit finite state machines.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How long a transition takes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepDuration {
    Seconds(f64),
    /// One full linear scan at the geometry's scan velocity.
    Named(DurationName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationName {
    Scan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub action: String,
    pub from: String,
    pub to: String,
    #[serde(rename = "duration_s")]
    pub duration: StepDuration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub home: String,
    #[serde(default)]
    pub failure_probability: f64,
    /// States in which this device holds the plate lid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lid_states: Vec<String>,
    pub transitions: Vec<Transition>,
}

impl DeviceSpec {
    pub fn validate(&self, name: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.failure_probability) {
            return Err(Error::Config(format!(
                "device {name}: failure_probability must lie in [0, 1], got {}",
                self.failure_probability
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.transitions {
            if !seen.insert((&t.action, &t.from)) {
                return Err(Error::Config(format!(
                    "device {name}: action {} is defined twice from state {}",
                    t.action, t.from
                )));
            }
            if let StepDuration::Seconds(s) = t.duration {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Config(format!(
                        "device {name}: action {} needs a positive duration",
                        t.action
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn transition(&self, action: &str, from: &str) -> Option<&Transition> {
        self.transitions
            .iter()
            .find(|t| t.action == action && t.from == from)
    }

    pub fn has_action(&self, action: &str) -> bool {
        self.transitions.iter().any(|t| t.action == action)
    }
}

/// A device and its current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Device {
    pub name: String,
    pub spec: DeviceSpec,
    state: String,
}

impl Device {
    pub fn new(name: &str, spec: DeviceSpec) -> Result<Self> {
        spec.validate(name)?;
        let state = spec.home.clone();
        Ok(Self {
            name: name.to_string(),
            spec,
            state,
        })
    }

    pub fn state(&self) -> &str {
        &self.state
    }

    pub fn is_home(&self) -> bool {
        self.state == self.spec.home
    }

    pub fn holds_lid(&self) -> bool {
        self.spec.lid_states.contains(&self.state)
    }

    /// Commands the device back to its home (safe) state.
    pub fn reset(&mut self) {
        self.state = self.spec.home.clone();
    }

    /// Performs `action` without failure injection.
    pub fn transition(&mut self, action: &str) -> std::result::Result<Transition, String> {
        let Some(t) = self.spec.transition(action, &self.state).cloned() else {
            return Err(format!(
                "{} cannot {action} from state {}",
                self.name, self.state
            ));
        };
        self.state = t.to.clone();
        Ok(t)
    }

    /// Attempts `action`; a Bernoulli draw decides injected failures.
    pub fn apply<R: Rng>(
        &mut self,
        action: &str,
        rng: &mut R,
    ) -> std::result::Result<Transition, String> {
        // Draw unconditionally so the random stream does not depend on the configured probabilities.
        let draw: f64 = rng.random();
        if self.spec.transition(action, &self.state).is_some()
            && draw < self.spec.failure_probability
        {
            return Err(format!("{} failed during {action}", self.name));
        }
        self.transition(action)
    }
}

/// Devices keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    devices: BTreeMap<String, Device>,
}

impl Registry {
    pub fn from_specs(specs: &BTreeMap<String, DeviceSpec>) -> Result<Self> {
        let mut devices = BTreeMap::new();
        for (name, spec) in specs {
            devices.insert(name.clone(), Device::new(name, spec.clone())?);
        }
        Ok(Self { devices })
    }

    pub fn get(&self, name: &str) -> Option<&Device> {
        self.devices.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Device> {
        self.devices.get_mut(name)
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Device> {
        self.devices.values()
    }

    pub fn all_home(&self) -> bool {
        self.devices.values().all(Device::is_home)
    }

    pub fn lid_on(&self) -> bool {
        !self.devices.values().any(Device::holds_lid)
    }

    pub fn reset_all(&mut self) {
        for d in self.devices.values_mut() {
            d.reset();
        }
    }
}

/// Simulated time in hours.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimClock {
    now: f64,
}

/// Bookkeeping time between ledger events, hours (one second).
pub const TICK_HOURS: f64 = 1.0 / 3600.0;

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn advance_seconds(&mut self, s: f64) -> f64 {
        self.now += s / 3600.0;
        self.now
    }

    pub fn tick(&mut self) -> f64 {
        self.now += TICK_HOURS;
        self.now
    }

    /// Moves forward to `t` if it lies in the future.
    pub fn wait_until(&mut self, t: f64) -> f64 {
        if t > self.now {
            self.now = t;
        }
        self.now
    }
}
