//! Automated hyperspectral characterisation of degrading polymer samples.
//!
//! The pipeline mirrors the stations it models:
//!
//! 1. [`hypercube`] – cube data model, header+raw file I/O, flat-field
//!    calibration and grayscale projection.
//! 2. [`roi`] – gradient Hough circle detection of wells, parameter
//!    auto-tuning and saturation-aware masks.
//! 3. [`series`] – per-well total reflected intensity over time, CSV
//!    persistence and replicate statistics.
//! 4. [`models`] – closed-form exponential and surface/bulk (Bernoulli)
//!    degradation models, half-life and total life.
//! 5. [`fit`] – bounded Levenberg–Marquardt fitting, R², AIC/MDL and model
//!    selection.
//! 6. [`sampler`] – sequential sampling with time-varying intervals and an
//!    offline replay harness.
//! 7. [`station`] – simulated devices, programs, campaigns and the run ledger.
//! 8. [`synth`] – seeded ground-truth scenes, frames and series.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod hypercube;
pub mod models;
pub mod roi;
pub mod sampler;
pub mod series;
pub mod station;
pub mod synth;

pub use error::{Error, Result};
