//! Goodness of fit and information criteria.

use crate::error::{Error, Result};

use super::FitResult;

/// AIC, MDL and the residual variance they were computed with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub aic: f64,
    pub mdl: f64,
    pub sigma2: f64,
}

/// AIC and MDL with the plug-in variance `σ² = Σr²/(N − P)`.
///
/// Residuals should come from data scaled so its maximum is 1. The MDL
/// penalty uses the natural logarithm.
pub fn model_metrics(residuals: &[f64], p: usize, n: usize) -> Result<Metrics> {
    if n != residuals.len() {
        return Err(Error::InvalidInput(format!(
            "N = {n} but {} residuals were given",
            residuals.len()
        )));
    }
    if n <= p {
        return Err(Error::DegreesOfFreedom { n, p });
    }
    let ssr = sum_sq(residuals);
    Ok(metrics_with_sigma2(residuals, p, ssr / (n - p) as f64))
}

/// AIC and MDL with an externally supplied `σ²`.
pub fn metrics_with_sigma2(residuals: &[f64], p: usize, sigma2: f64) -> Metrics {
    let ssr = sum_sq(residuals);
    let n = residuals.len() as f64;
    let p = p as f64;
    Metrics {
        aic: ssr + 2.0 * p * sigma2,
        mdl: ssr + p / 2.0 * n.ln() * sigma2,
        sigma2,
    }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum()
}

/// `1 − SS_res/SS_tot`; may be negative for predictions worse than the mean.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(Error::InvalidInput(format!(
            "{} observations but {} predictions",
            observed.len(),
            predicted.len()
        )));
    }
    if observed.len() < 2 {
        return Err(Error::InvalidInput("R² needs at least two points".into()));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::UndefinedRSquared);
    }
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

const TIE: f64 = 1e-12;

/// Lowest AIC wins; near-ties go to fewer parameters, then lower MDL.
pub fn select_model(fits: &[FitResult]) -> Result<&FitResult> {
    let first = fits
        .first()
        .ok_or_else(|| Error::Comparison("no fits to compare".into()))?;
    if let Some(f) = fits.iter().find(|f| f.n != first.n) {
        return Err(Error::Comparison(format!(
            "fits cover different data (N = {} vs N = {})",
            first.n, f.n
        )));
    }
    let mut best = first;
    for f in &fits[1..] {
        let better = if (f.aic - best.aic).abs() <= TIE {
            f.p < best.p || (f.p == best.p && f.mdl < best.mdl)
        } else {
            f.aic < best.aic
        };
        if better {
            best = f;
        }
    }
    Ok(best)
}
