//! Range measurement likelihood for the autonomous sensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CameraPose, ParticleGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorId(pub u32);

impl std::fmt::Display for SensorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sensor {}", self.0)
    }
}

/// One range report. When `detected` is false the range carries no information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeObservation {
    pub sensor_id: SensorId,
    pub range: f64,
    pub detected: bool,
    pub pose: CameraPose,
    pub sigma_d: f64,
}

impl RangeObservation {
    pub fn validate(&self) -> Result<()> {
        if !(self.range >= 0.0) || !self.range.is_finite() {
            return Err(Error::param("range", format!("must be finite and >= 0, got {}", self.range)));
        }
        if !(self.sigma_d > 0.0) || !self.sigma_d.is_finite() {
            return Err(Error::param("sigma_d", format!("must be positive, got {}", self.sigma_d)));
        }
        Ok(())
    }
}

/// Per-particle likelihood of one range report.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeLikelihood {
    pub values: Vec<f64>,
    /// False for a non-detection: `values` is then all ones and the report
    /// should be left out of fusion.
    pub informative: bool,
}

/// Distance from the sensor to each particle lifted onto the ground plane.
pub fn particle_ranges(grid: &ParticleGrid, pose: &CameraPose) -> Vec<f64> {
    let c = pose.position();
    grid.positions()
        .iter()
        .map(|p| {
            let dx = c.x - p.x;
            let dy = c.y - p.y;
            (dx * dx + dy * dy + c.z * c.z).sqrt()
        })
        .collect()
}

/// `N(range; r_i, sigma_d^2)` for every particle; un-normalised across particles.
pub fn range_likelihood(grid: &ParticleGrid, obs: &RangeObservation) -> Result<RangeLikelihood> {
    obs.validate()?;
    if !obs.detected {
        return Ok(RangeLikelihood { values: vec![1.0; grid.len()], informative: false });
    }
    let norm = 1.0 / (obs.sigma_d * (2.0 * std::f64::consts::PI).sqrt());
    let values = particle_ranges(grid, &obs.pose)
        .into_iter()
        .map(|r| {
            let z = (obs.range - r) / obs.sigma_d;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    Ok(RangeLikelihood { values, informative: true })
}

/// Same as [`range_likelihood`] in log space. A non-detection gives all zeros.
pub fn range_log_likelihood(grid: &ParticleGrid, obs: &RangeObservation) -> Result<RangeLikelihood> {
    obs.validate()?;
    if !obs.detected {
        return Ok(RangeLikelihood { values: vec![0.0; grid.len()], informative: false });
    }
    let log_norm = -obs.sigma_d.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let values = particle_ranges(grid, &obs.pose)
        .into_iter()
        .map(|r| {
            let z = (obs.range - r) / obs.sigma_d;
            log_norm - 0.5 * z * z
        })
        .collect();
    Ok(RangeLikelihood { values, informative: true })
}
