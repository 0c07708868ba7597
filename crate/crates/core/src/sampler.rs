//! Sequential sampling with time-varying intervals.
//!
//! After each measurement the observed intensity change `Δi` is compared
//! with an ideal change `i_e`. Close enough keeps the interval; otherwise
//! the interval is rescaled by `s = (1 − f)·e^(−d) + f`, where `d` is a
//! normalised distance between `Δi` and `i_e`. A change faster than ideal
//! uses `f_fast` (< 1, shortens); a slower one uses `f_slow` (> 1,
//! lengthens). Sampling stops once `i_e` drops below `ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::IntensitySeries;

/// Reference level subtracted before applying the desired rate of change.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Floor {
    #[default]
    Zero,
    /// Smallest intensity seen so far.
    RunningMin,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Desired fractional change per interval, in (0, 1).
    pub rate_c: f64,
    /// Stop threshold; 1% of the first intensity when absent.
    pub epsilon: Option<f64>,
    /// Margin on `|i_e − Δi|` within which the interval is kept.
    pub delta: f64,
    pub gain_g: f64,
    pub f_slow: f64,
    pub f_fast: f64,
    /// Interval bounds, hours.
    pub b_l: f64,
    pub b_u: f64,
    pub d_max: f64,
    pub floor: Floor,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            rate_c: 0.1,
            epsilon: None,
            delta: 0.0,
            gain_g: 1.0,
            f_slow: 2.0,
            f_fast: 0.5,
            b_l: 0.25,
            b_u: 24.0,
            d_max: 50.0,
            floor: Floor::Zero,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("sampler: {m}")));
        if !(self.rate_c >= 0.0 && self.rate_c < 1.0) {
            return bad("rate_c must lie in [0, 1)");
        }
        if self.epsilon.is_some_and(|e| !(e >= 0.0)) {
            return bad("epsilon must be non-negative");
        }
        if !(self.delta >= 0.0) || !(self.gain_g >= 0.0) {
            return bad("delta and gain_g must be non-negative");
        }
        if !(self.f_fast > 0.0
            && self.f_fast <= 1.0
            && self.f_slow >= 1.0
            && self.f_slow.is_finite())
        {
            return bad("need 0 < f_fast <= 1 <= f_slow");
        }
        if !(self.b_l > 0.0 && self.b_l <= self.b_u && self.b_u.is_finite()) {
            return bad("need 0 < b_l <= b_u");
        }
        if !(self.d_max > 0.0) {
            return bad("d_max must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Stop,
    Continue,
    Retime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerDecision {
    pub kind: DecisionKind,
    /// Absolute time of the next measurement; absent for `Stop`.
    pub t_next: Option<f64>,
    pub i_e: f64,
    pub delta_i: f64,
    pub d: Option<f64>,
    pub s: Option<f64>,
}

impl SamplerDecision {
    pub fn is_stop(&self) -> bool {
        self.kind == DecisionKind::Stop
    }
}

/// `i_e = rate_c · max(I_latest − I_floor, 0)`.
pub fn ideal_change(history: &[f64], rate_c: f64, floor: Floor) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory(history.len()));
    }
    let latest = history[history.len() - 1];
    let floor = match floor {
        Floor::Zero => 0.0,
        Floor::RunningMin => history.iter().copied().fold(f64::INFINITY, f64::min),
        Floor::Fixed(v) => v,
    };
    Ok(rate_c * (latest - floor).max(0.0))
}

/// `d = g·(Δi/i_e − 2 + i_e/Δi)`, clamped to `[0, d_max]`; `Δi = 0` gives `d_max`.
pub fn norm_distance(i_e: f64, delta_i: f64, gain_g: f64, d_max: f64) -> Result<f64> {
    if !(i_e > 0.0) {
        return Err(Error::Contract(format!(
            "norm_distance needs i_e > 0, got {i_e}"
        )));
    }
    if delta_i == 0.0 {
        return Ok(d_max);
    }
    let d = gain_g * (delta_i / i_e - 2.0 + i_e / delta_i);
    Ok(d.clamp(0.0, d_max))
}

/// `s = (1 − f)·e^(−d) + f`.
pub fn interval_scale(d: f64, f: f64) -> f64 {
    (1.0 - f) * (-d).exp() + f
}

/// Per-well sampler history and current interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    times: Vec<f64>,
    values: Vec<f64>,
    dt: f64,
}

impl SamplerState {
    pub fn new(dt0: f64) -> Result<Self> {
        if !(dt0 > 0.0 && dt0.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "initial interval must be positive, got {dt0}"
            )));
        }
        Ok(Self {
            times: Vec::new(),
            values: Vec::new(),
            dt: dt0,
        })
    }

    /// Current interval Δt, hours.
    pub fn interval(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        match self.times.last() {
            Some(&last) if t <= last => Err(Error::NonMonotoneTime {
                sample: 0,
                last,
                new: t,
            }),
            _ if !t.is_finite() => Err(Error::InvalidInput(format!("time {t} is not finite"))),
            _ => Ok(()),
        }
    }

    /// Records a measurement without deciding anything (first sample).
    pub fn record(&mut self, t: f64, intensity: f64) -> Result<()> {
        self.check_time(t)?;
        self.times.push(t);
        self.values.push(intensity);
        Ok(())
    }

    /// Records a measurement taken at `t` and decides when to measure next.
    pub fn step(&mut self, cfg: &SamplerConfig, t: f64, intensity: f64) -> Result<SamplerDecision> {
        if self.values.is_empty() {
            return Err(Error::InsufficientHistory(1));
        }
        self.check_time(t)?;
        self.times.push(t);
        self.values.push(intensity);
        let n = self.values.len();
        let i_e = ideal_change(&self.values, cfg.rate_c, cfg.floor)?;
        let delta_i = (self.values[n - 1] - self.values[n - 2]).abs();
        let epsilon = cfg.epsilon.unwrap_or(0.01 * self.values[0]);
        let mut decision = SamplerDecision {
            kind: DecisionKind::Stop,
            t_next: None,
            i_e,
            delta_i,
            d: None,
            s: None,
        };
        if i_e < epsilon || i_e <= 0.0 {
            return Ok(decision);
        }
        if (i_e - delta_i).abs() < cfg.delta {
            decision.kind = DecisionKind::Continue;
            decision.t_next = Some(t + self.dt);
            return Ok(decision);
        }
        let d = norm_distance(i_e, delta_i, cfg.gain_g, cfg.d_max)?;
        let f = if delta_i > i_e {
            cfg.f_fast
        } else {
            cfg.f_slow
        };
        let s = interval_scale(d, f);
        self.dt = (self.dt * s).clamp(cfg.b_l, cfg.b_u);
        decision.kind = DecisionKind::Retime;
        decision.t_next = Some(t + self.dt);
        decision.d = Some(d);
        decision.s = Some(s);
        Ok(decision)
    }

    /// Overrides the interval, e.g. after the station snapped to a shared schedule.
    pub fn set_interval(&mut self, dt: f64) {
        if dt > 0.0 && dt.is_finite() {
            self.dt = dt;
        }
    }
}

/// Earliest next time over all non-stopped wells; `Stop` only if every well stopped.
pub fn aggregate(decisions: &[SamplerDecision]) -> Result<SamplerDecision> {
    let first = decisions
        .first()
        .ok_or_else(|| Error::InvalidInput("no sampler decisions to aggregate".into()))?;
    Ok(decisions
        .iter()
        .filter(|d| !d.is_stop())
        .min_by(|a, b| {
            a.t_next
                .unwrap_or(f64::INFINITY)
                .total_cmp(&b.t_next.unwrap_or(f64::INFINITY))
        })
        .copied()
        .unwrap_or(*first))
}

/// One replay step, serialised as a schedule-log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub t_now: f64,
    pub i: f64,
    pub i_e: f64,
    pub delta_i: f64,
    pub d: Option<f64>,
    pub s: Option<f64>,
    pub decision: DecisionKind,
    pub t_next: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Indices into the dense series, ascending.
    pub selected: Vec<usize>,
    pub log: Vec<ScheduleRecord>,
}

impl Replay {
    pub fn fraction(&self, total: usize) -> f64 {
        self.selected.len() as f64 / total as f64
    }

    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs the sampler against a recorded dense series, snapping every
/// requested time to the nearest recorded point after the current one.
pub fn replay(dense: &IntensitySeries, cfg: &SamplerConfig, dt0: f64) -> Result<Replay> {
    cfg.validate()?;
    if dense.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "replay needs a dense series of at least 10 points, got {}",
            dense.len()
        )));
    }
    let pts = dense.points();
    let mut state = SamplerState::new(dt0)?;
    state.record(pts[0].t, pts[0].intensity)?;
    let mut selected = vec![0];
    let mut log = Vec::new();
    let mut current = 0;
    let mut target = pts[0].t + dt0;
    while let Some(next) = nearest_after(pts.iter().map(|p| p.t), current, target) {
        state.set_interval(pts[next].t - pts[current].t);
        let dec = state.step(cfg, pts[next].t, pts[next].intensity)?;
        selected.push(next);
        log.push(ScheduleRecord {
            t_now: pts[next].t,
            i: pts[next].intensity,
            i_e: dec.i_e,
            delta_i: dec.delta_i,
            d: dec.d,
            s: dec.s,
            decision: dec.kind,
            t_next: dec.t_next,
        });
        match dec.t_next {
            Some(t) => target = t,
            None => break,
        }
        current = next;
    }
    Ok(Replay { selected, log })
}

/// Index `j > current` whose time is nearest `target` (earliest on ties).
fn nearest_after(times: impl Iterator<Item = f64>, current: usize, target: f64) -> Option<usize> {
    times
        .enumerate()
        .skip(current + 1)
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(j, _)| j)
}
