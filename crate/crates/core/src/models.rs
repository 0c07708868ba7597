//! Closed-form degradation models.
//!
//! Two kinetics are supported:
//!
//! * **exponential** (bulk erosion): `R(t) = a·exp(−k_d·t) + c`;
//! * **surface + bulk** (Bernoulli): `−dm/dt = k1·m + b·m^(2/3)`, with the
//!   surface constants `k2(4πρ)^(1/3)·3^(2/3)` lumped into `b`. Reflectance
//!   is `R(t) = m(t) + c` (amplitude fixed to 1, so `m0` carries it).
//!
//! The Bernoulli equation is linear in `v = m^(1/3)`:
//! `dv/dt = −(k1/3)·v − b/3`, giving
//! `v(t) = m0^(1/3)·e^(−x) − (b·t/3)·φ(x)` with `x = k1·t/3` and
//! `φ(x) = (1 − e^(−x))/x`. This is the same curve as
//! `e^(−k1·t)·(u − b·e^(k1·t/3))³ / k1³` with `u = k1·m0^(1/3) + b`, but
//! stays finite as `k1 → 0`. Mass is clamped at zero once `v` reaches zero
//! (the extinction time `t_ext`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default total-life threshold: 1% of the initial amplitude.
pub const DEFAULT_THETA: f64 = 0.01;

/// Parameters of `a·exp(−k_d·t) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub a: f64,
    /// Decay constant, 1/hour.
    pub k_d: f64,
    pub c: f64,
}

/// Parameters of the surface/bulk model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvParams {
    /// Initial mass-equivalent amplitude.
    pub m0: f64,
    /// Bulk (mass-proportional) rate, 1/hour.
    pub k1: f64,
    /// Lumped surface rate `k2·(4πρ)^(1/3)·3^(2/3)`.
    pub b: f64,
    pub c: f64,
}

/// Either model's parameters, tagged `"exp"` / `"adv"` when serialised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    Exp(ExpParams),
    Adv(AdvParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Exp,
    Adv,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Exp => "exp",
            ModelKind::Adv => "adv",
        }
    }

    /// Number of free parameters.
    pub fn param_count(self) -> usize {
        match self {
            ModelKind::Exp => 3,
            ModelKind::Adv => 4,
        }
    }
}

/// Half-life (exponential only) and total life of a fitted curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifeMetrics {
    pub half_life: Option<f64>,
    pub total_life: f64,
    pub theta: f64,
}

impl ExpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0 && self.k_d >= 0.0 && self.c >= 0.0;
        if ok && self.a.is_finite() && self.k_d.is_finite() && self.c.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid exponential parameters {self:?}"
            )))
        }
    }
}

impl AdvParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.m0, self.k1, self.b, self.c]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.m0 > 0.0 && self.k1 >= 0.0 && self.b >= 0.0 && self.c >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid advanced-model parameters {self:?}"
            )))
        }
    }

    /// `u = e^(d1·k1) = k1·m0^(1/3) + b`, the integration constant fixed by `m(0) = m0`.
    pub fn u(&self) -> f64 {
        self.k1 * self.m0.cbrt() + self.b
    }

    /// Time at which the mass reaches zero; `None` when `b = 0` (never).
    pub fn extinction_time(&self) -> Option<f64> {
        if self.b <= 0.0 {
            return None;
        }
        let g = self.m0.cbrt();
        if self.k1 > 0.0 {
            Some(3.0 / self.k1 * (self.k1 * g / self.b).ln_1p())
        } else {
            Some(3.0 * g / self.b)
        }
    }

    /// `m^(1/3)` before clamping; negative past extinction.
    pub(crate) fn cube_root_mass(&self, t: f64) -> f64 {
        let x = self.k1 * t / 3.0;
        self.m0.cbrt() * (-x).exp() - self.b * t / 3.0 * phi(x)
    }
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Exp(_) => ModelKind::Exp,
            ModelParams::Adv(_) => ModelKind::Adv,
        }
    }

    pub fn reflectance(&self, t: f64) -> f64 {
        match self {
            ModelParams::Exp(p) => exp_reflectance(t, p),
            ModelParams::Adv(p) => adv_reflectance(t, p),
        }
    }

    pub fn baseline(&self) -> f64 {
        match self {
            ModelParams::Exp(p) => p.c,
            ModelParams::Adv(p) => p.c,
        }
    }

    /// Returns the same parameters with amplitude and baseline multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> ModelParams {
        match *self {
            ModelParams::Exp(p) => ModelParams::Exp(ExpParams {
                a: p.a * lambda,
                c: p.c * lambda,
                ..p
            }),
            // m scales by λ, so v = m^(1/3) scales by λ^(1/3) and so must b.
            ModelParams::Adv(p) => ModelParams::Adv(AdvParams {
                m0: p.m0 * lambda,
                b: p.b * lambda.cbrt(),
                c: p.c * lambda,
                ..p
            }),
        }
    }

    pub fn life(&self, theta: f64) -> Result<LifeMetrics> {
        match self {
            ModelParams::Exp(p) => Ok(LifeMetrics {
                half_life: Some(half_life(p.k_d)?),
                total_life: exp_total_life(p, theta)?,
                theta,
            }),
            ModelParams::Adv(p) => Ok(LifeMetrics {
                half_life: None,
                total_life: adv_total_life(p, theta)?,
                theta,
            }),
        }
    }
}

/// `(1 − e^(−x)) / x`, with its limit 1 at `x = 0`.
#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - x / 2.0 + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `a·e^(−k_d·t) + c`.
pub fn exp_reflectance(t: f64, p: &ExpParams) -> f64 {
    p.a * (-p.k_d * t).exp() + p.c
}

/// Remaining mass of the surface/bulk model, clamped at zero after extinction.
pub fn adv_mass(t: f64, p: &AdvParams) -> f64 {
    if p.b == 0.0 {
        return p.m0 * (-p.k1 * t).exp();
    }
    let v = p.cube_root_mass(t);
    if v <= 0.0 {
        0.0
    } else {
        v * v * v
    }
}

pub fn adv_reflectance(t: f64, p: &AdvParams) -> f64 {
    adv_mass(t, p) + p.c
}

/// `dm/dt = −(k1·m + b·m^(2/3))`.
pub fn mass_ode_rhs(m: f64, k1: f64, b: f64) -> f64 {
    let m = m.max(0.0);
    -(k1 * m + b * m.cbrt().powi(2))
}

/// `ln 2 / k_d`.
pub fn half_life(k_d: f64) -> Result<f64> {
    if k_d > 0.0 && k_d.is_finite() {
        Ok(std::f64::consts::LN_2 / k_d)
    } else {
        Err(Error::NoDecay(format!(
            "half-life needs k_d > 0, got {k_d}"
        )))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "theta must lie in (0, 1), got {theta}"
        )))
    }
}

/// Time for `a·e^(−k_d·t)` to fall to `θ·a`: `ln(1/θ)/k_d`.
pub fn exp_total_life(p: &ExpParams, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if p.k_d > 0.0 {
        Ok((1.0 / theta).ln() / p.k_d)
    } else {
        Err(Error::NoDecay("exponential model with k_d = 0".into()))
    }
}

/// Smallest `t` with `m(t) ≤ θ·m0`, located by bisection to 1e−9 h.
pub fn adv_total_life(p: &AdvParams, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    p.validate()?;
    if p.k1 <= 0.0 && p.b <= 0.0 {
        return Err(Error::NoDecay(
            "advanced model with k1 = 0 and b = 0".into(),
        ));
    }
    let target = theta * p.m0;
    // m(t) ≤ m0·e^(−k1 t), and m hits zero at t_ext: either gives an upper bracket.
    let mut hi = f64::INFINITY;
    if p.k1 > 0.0 {
        hi = hi.min((1.0 / theta).ln() / p.k1);
    }
    if let Some(t_ext) = p.extinction_time() {
        hi = hi.min(t_ext);
    }
    let mut lo = 0.0;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if adv_mass(mid, p) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Total life for either model.
pub fn total_life(p: &ModelParams, theta: f64) -> Result<f64> {
    match p {
        ModelParams::Exp(p) => exp_total_life(p, theta),
        ModelParams::Adv(p) => adv_total_life(p, theta),
    }
}
