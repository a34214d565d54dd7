//! Human inside-drawing likelihood and its marginal over operator reliability.
//!
//! An operator with reliability `a` who encloses `M` particles is modelled as
//! `M` independent single-particle draws: the candidate state gets
//! `a^d (1 - a)^(M - d)` where `d` is 1 if it is enclosed. With
//! `a ~ Beta(alpha, beta)` and fusion weight `w`, the tempered likelihood
//! integrates to a ratio of Beta functions:
//!
//! ```text
//! inside:  B(alpha + w,  beta + w (M - 1)) / B(alpha, beta)
//! outside: B(alpha,      beta + w M)       / B(alpha, beta)
//! ```

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::{polygon_mask, ParticleGrid, ParticleMask, Polygon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OperatorId(pub u32);

impl std::fmt::Display for OperatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "operator {}", self.0)
    }
}

/// A resolved inside-drawing: the operator claims the target is among the
/// masked particles.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchObservation {
    pub operator_id: OperatorId,
    pub polygon: Option<Polygon>,
    pub mask: ParticleMask,
    pub t: u64,
}

impl SketchObservation {
    pub fn from_mask(operator_id: OperatorId, mask: ParticleMask, t: u64) -> Self {
        Self { operator_id, polygon: None, mask, t }
    }

    /// Resolve a world-frame polygon against the grid. Fails with
    /// [`Error::EmptySketch`] if nothing is enclosed.
    pub fn from_polygon(operator_id: OperatorId, grid: &ParticleGrid, polygon: Polygon, t: u64) -> Result<Self> {
        let mask = polygon_mask(grid, &polygon)?;
        Ok(Self { operator_id, polygon: Some(polygon), mask, t })
    }

    /// Number of enclosed particles.
    pub fn enclosed(&self) -> usize {
        self.mask.count()
    }

    /// A whole-grid sketch carries no information once normalised.
    pub fn is_zero_information(&self) -> bool {
        self.mask.covers_all()
    }
}

/// `Beta(alpha, beta)` belief over one operator's detection reliability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityState {
    pub operator_id: OperatorId,
    pub alpha: f64,
    pub beta: f64,
}

impl ReliabilityState {
    pub fn new(operator_id: OperatorId, alpha: f64, beta: f64) -> Result<Self> {
        check_beta_params(alpha, beta)?;
        Ok(Self { operator_id, alpha, beta })
    }

    pub fn validate(&self) -> Result<()> {
        check_beta_params(self.alpha, self.beta)
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        beta_variance(self.alpha, self.beta)
    }
}

pub(crate) fn check_beta_params(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be positive and finite, got {alpha}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", format!("must be positive and finite, got {beta}")));
    }
    Ok(())
}

pub(crate) fn beta_variance(a: f64, b: f64) -> f64 {
    let s = a + b;
    a * b / (s * s * (s + 1.0))
}

/// `ln B(a, b)` via log-Gamma.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Probability of one drawn particle given reliability `a`: `a` on a match, `1 - a` otherwise.
pub fn single_draw_likelihood(a: f64, matched: bool) -> f64 {
    debug_assert!((0.0..=1.0).contains(&a), "reliability {a} outside [0, 1]");
    if matched {
        a
    } else {
        1.0 - a
    }
}

/// `a^d (1 - a)^(M - d)` for an `M`-particle drawing, `d = 1` if the candidate is inside.
pub fn multi_draw_likelihood(a: f64, enclosed: usize, inside: bool) -> f64 {
    debug_assert!(enclosed >= 1);
    let d = usize::from(inside);
    a.powi(d as i32) * (1.0 - a).powi((enclosed - d) as i32)
}

/// Log marginal likelihood for an enclosed and a non-enclosed particle.
pub fn marginal_log_pair(rel: &ReliabilityState, weight: f64, enclosed: usize) -> Result<(f64, f64)> {
    rel.validate()?;
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::param("w_h", format!("must lie in [0, 1], got {weight}")));
    }
    if enclosed == 0 {
        return Err(Error::EmptySketch);
    }
    let (a, b) = (rel.alpha, rel.beta);
    let m = enclosed as f64;
    let base = ln_beta(a, b);
    let inside = ln_beta(weight + a, weight * (m - 1.0) + b) - base;
    let outside = ln_beta(a, weight * m + b) - base;
    Ok((inside, outside))
}

/// Per-particle log marginal sketch likelihood. Exactly two distinct values occur.
pub fn marginal_sketch_log_likelihood(sketch: &SketchObservation, rel: &ReliabilityState, weight: f64) -> Result<Vec<f64>> {
    let (inside, outside) = marginal_log_pair(rel, weight, sketch.enclosed())?;
    Ok(sketch.mask.bits().iter().map(|&b| if b { inside } else { outside }).collect())
}

/// Per-particle marginal sketch likelihood in linear space.
pub fn marginal_sketch_likelihood(sketch: &SketchObservation, rel: &ReliabilityState, weight: f64) -> Result<Vec<f64>> {
    Ok(marginal_sketch_log_likelihood(sketch, rel, weight)?.into_iter().map(f64::exp).collect())
}
