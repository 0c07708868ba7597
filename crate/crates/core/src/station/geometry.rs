//! Push-broom scan geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    /// Camera field of view, degrees.
    pub fov_deg: f64,
    /// Desired image length `L`, mm.
    pub length_mm: f64,
    /// Effective slit width `L_e`, mm.
    pub slit_mm: f64,
    /// Spatial resolution `R_p`, pixels.
    pub resolution_px: f64,
    pub frame_rate_hz: f64,
}

impl Default for ScanGeometry {
    fn default() -> Self {
        Self {
            fov_deg: 38.0,
            length_mm: 110.0,
            slit_mm: 10.0,
            resolution_px: 1024.0,
            frame_rate_hz: 100.0,
        }
    }
}

impl ScanGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Geometry(format!(
                "field of view must lie in (0, 180) degrees, got {}",
                self.fov_deg
            )));
        }
        if !(self.slit_mm >= 0.0 && self.length_mm > self.slit_mm) {
            return Err(Error::Geometry(format!(
                "need L > L_e >= 0, got L = {} mm, L_e = {} mm",
                self.length_mm, self.slit_mm
            )));
        }
        if !(self.resolution_px >= 1.0) {
            return Err(Error::Geometry(format!(
                "resolution must be >= 1 px, got {}",
                self.resolution_px
            )));
        }
        if !(self.frame_rate_hz >= 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(Error::Geometry(format!(
                "frame rate must be >= 0, got {}",
                self.frame_rate_hz
            )));
        }
        Ok(())
    }

    /// Time to sweep the image length at [`scan_velocity`], seconds.
    pub fn scan_seconds(&self) -> Result<f64> {
        let v = scan_velocity(self)?;
        if v > 0.0 {
            Ok(self.length_mm / v)
        } else {
            Err(Error::Geometry(
                "a stationary scan (0 Hz) never completes".into(),
            ))
        }
    }
}

/// Camera-to-plate distance `d = (L − L_e)/2 · cot(FOV/2)`, mm.
pub fn camera_distance(g: &ScanGeometry) -> Result<f64> {
    g.validate()?;
    let half = (g.fov_deg / 2.0).to_radians();
    Ok((g.length_mm - g.slit_mm) / 2.0 / half.tan())
}

/// Linear-stage velocity `V_c = L/R_p · f`, mm/s.
pub fn scan_velocity(g: &ScanGeometry) -> Result<f64> {
    g.validate()?;
    if g.frame_rate_hz == 0.0 {
        log::warn!("frame rate is 0 Hz: the scan is stationary");
    }
    Ok(g.length_mm / g.resolution_px * g.frame_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(fov: f64, l: f64, le: f64) -> ScanGeometry {
        ScanGeometry {
            fov_deg: fov,
            length_mm: l,
            slit_mm: le,
            ..Default::default()
        }
    }

    #[test]
    fn distance_table() {
        assert!((camera_distance(&geo(90.0, 100.0, 0.0)).unwrap() - 50.0).abs() < 1e-9);
        assert!(
            (camera_distance(&geo(60.0, 120.0, 20.0)).unwrap() - 50.0 * 3f64.sqrt()).abs() < 1e-9
        );
        let d = camera_distance(&geo(38.0, 110.0, 10.0)).unwrap();
        assert!((d - 50.0 / 19f64.to_radians().tan()).abs() < 1e-9);
        assert!((d - 145.21).abs() < 0.01, "{d}");
    }

    #[test]
    fn velocity_table() {
        let g = ScanGeometry {
            length_mm: 102.4,
            resolution_px: 1024.0,
            frame_rate_hz: 100.0,
            ..Default::default()
        };
        assert!((scan_velocity(&g).unwrap() - 10.0).abs() < 1e-9);
        let g = ScanGeometry {
            length_mm: 50.0,
            resolution_px: 1000.0,
            frame_rate_hz: 60.0,
            ..Default::default()
        };
        assert!((scan_velocity(&g).unwrap() - 3.0).abs() < 1e-9);
        let g = ScanGeometry {
            frame_rate_hz: 0.0,
            ..Default::default()
        };
        assert_eq!(scan_velocity(&g).unwrap(), 0.0);
        assert!(g.scan_seconds().is_err());
    }

    #[test]
    fn invalid_geometry() {
        assert!(matches!(
            camera_distance(&geo(180.0, 100.0, 0.0)),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            camera_distance(&geo(0.0, 100.0, 0.0)),
            Err(Error::Geometry(_))
        ));
        assert!(camera_distance(&geo(90.0, 10.0, 10.0)).is_err());
    }
}
