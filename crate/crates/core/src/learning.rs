//! Online reliability learning from the filtered target posterior.
//!
//! Given the posterior after a sketch is fused, the operator's reliability
//! posterior is the two-component mixture
//!
//! ```text
//! q_s Beta(alpha + w, beta + w (M - 1)) + (1 - q_s) Beta(alpha, beta + w M)
//! ```
//!
//! where `q_s` is the posterior mass inside the sketch. It is projected back
//! onto a single Beta by matching mean and variance, which keeps the update
//! closed form from one sketch to the next.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::human::{beta_variance, check_beta_params, ReliabilityState, SketchObservation};
use crate::tracker::Belief;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_beta_params(alpha, beta)?;
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        beta_variance(self.alpha, self.beta)
    }

    pub fn sum(&self) -> f64 {
        self.alpha + self.beta
    }
}

/// Two-component Beta posterior over an operator's reliability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaMixture {
    /// `q_s`, the weight of the enclosed component.
    pub weight_in: f64,
    pub comp_in: BetaParams,
    pub comp_out: BetaParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Squared mixture weights on the component variances, shared denominator.
    #[default]
    Weighted,
    /// Law of total variance with each component's own moments.
    Exact,
}

impl VarianceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            VarianceMode::Weighted => "weighted",
            VarianceMode::Exact => "exact",
        }
    }
}

/// Posterior mass inside the mask.
pub fn enclosed_mass(posterior: &Belief, mask: &[bool]) -> Result<f64> {
    if posterior.len() != mask.len() {
        return Err(Error::DimensionMismatch { expected: posterior.len(), got: mask.len() });
    }
    let q: f64 = posterior.weights().iter().zip(mask).filter(|(_, m)| **m).map(|(w, _)| *w).sum();
    Ok(q.clamp(0.0, 1.0))
}

pub fn posterior_mixture(rel: &ReliabilityState, weight: f64, enclosed: usize, q_s: f64) -> Result<BetaMixture> {
    rel.validate()?;
    if !(0.0..=1.0).contains(&q_s) {
        return Err(Error::param("q_s", format!("must lie in [0, 1], got {q_s}")));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::param("w_h", format!("must lie in [0, 1], got {weight}")));
    }
    if enclosed == 0 {
        return Err(Error::EmptySketch);
    }
    let m = enclosed as f64;
    Ok(BetaMixture {
        weight_in: q_s,
        comp_in: BetaParams { alpha: weight + rel.alpha, beta: weight * (m - 1.0) + rel.beta },
        comp_out: BetaParams { alpha: rel.alpha, beta: weight * m + rel.beta },
    })
}

/// Mean and variance as written for the moment-matching step: the mean is
/// the weighted numerator over `w M + alpha + beta`, the variance weights the
/// component numerators by `q_s^2` and `(1 - q_s)^2`.
pub fn weighted_moments(mix: &BetaMixture) -> (f64, f64) {
    let q = mix.weight_in;
    // Both components share alpha + beta = w M + alpha_prior + beta_prior.
    let s = mix.comp_in.sum();
    let mean = (q * mix.comp_in.alpha + (1.0 - q) * mix.comp_out.alpha) / s;
    let var = (q * q * mix.comp_in.alpha * mix.comp_in.beta + (1.0 - q) * (1.0 - q) * mix.comp_out.alpha * mix.comp_out.beta)
        / (s * s * (s + 1.0));
    (mean, var)
}

/// Exact mixture mean and variance.
pub fn exact_mixture_moments(mix: &BetaMixture) -> (f64, f64) {
    let q = mix.weight_in;
    let (m1, v1) = (mix.comp_in.mean(), mix.comp_in.variance());
    let (m2, v2) = (mix.comp_out.mean(), mix.comp_out.variance());
    let mean = q * m1 + (1.0 - q) * m2;
    // Same as q v1 + (1-q) v2 + q (1-q) (m1 - m2)^2 but without the cancellation.
    let var = q * v1 + (1.0 - q) * v2 + q * (1.0 - q) * (m1 - m2) * (m1 - m2);
    (mean, var)
}

/// Invert the Beta mean/variance relations.
pub fn fit_beta_from_moments(mean: f64, variance: f64) -> Result<BetaParams> {
    if !(mean > 0.0 && mean < 1.0) || !(variance > 0.0) || variance >= mean * (1.0 - mean) {
        return Err(Error::InfeasibleMoments { mean, variance });
    }
    let nu = mean * (1.0 - mean) / variance - 1.0;
    BetaParams::new(mean * nu, (1.0 - mean) * nu).map_err(|_| Error::InfeasibleMoments { mean, variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningOptions {
    pub variance_mode: VarianceMode,
    /// Exponential discount applied to `(alpha, beta)` before each update.
    /// `None` accumulates evidence indefinitely.
    #[serde(default)]
    pub forgetting: Option<f64>,
}

/// What happened during one reliability update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOutcome {
    /// `q_s` was exactly 0 or 1; the matching component was taken as is.
    Collapsed,
    Matched(VarianceMode),
    /// The requested mode was infeasible and the other one was used.
    FellBack(VarianceMode),
    /// Neither mode gave feasible moments; reliability left unchanged.
    Held,
}

impl UpdateOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            UpdateOutcome::Collapsed => "collapsed",
            UpdateOutcome::Matched(VarianceMode::Weighted) => "weighted",
            UpdateOutcome::Matched(VarianceMode::Exact) => "exact",
            UpdateOutcome::FellBack(VarianceMode::Weighted) => "fallback-weighted",
            UpdateOutcome::FellBack(VarianceMode::Exact) => "fallback-exact",
            UpdateOutcome::Held => "held",
        }
    }
}

/// One line of the reliability trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRecord {
    pub t: u64,
    pub operator_id: u32,
    pub q_s: f64,
    #[serde(rename = "M")]
    pub enclosed: usize,
    pub mode: &'static str,
    pub alpha_before: f64,
    pub beta_before: f64,
    pub alpha_after: f64,
    pub beta_after: f64,
    pub mean_after: f64,
    pub weighted_variance: f64,
    pub exact_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityUpdate {
    pub state: ReliabilityState,
    pub record: LearningRecord,
    pub outcome: UpdateOutcome,
}

/// Update one operator's reliability against the already-updated target posterior.
pub fn update_reliability(
    rel: &ReliabilityState,
    sketch: &SketchObservation,
    posterior: &Belief,
    weight: f64,
    options: &LearningOptions,
) -> Result<ReliabilityUpdate> {
    let mut prior = *rel;
    if let Some(lambda) = options.forgetting {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::param("forgetting", format!("must lie in (0, 1], got {lambda}")));
        }
        prior.alpha *= lambda;
        prior.beta *= lambda;
    }
    let q_s = enclosed_mass(posterior, sketch.mask.bits())?;
    let mix = posterior_mixture(&prior, weight, sketch.enclosed(), q_s)?;
    let weighted = weighted_moments(&mix);
    let exact = exact_mixture_moments(&mix);

    let (params, outcome) = if q_s == 1.0 {
        (Some(mix.comp_in), UpdateOutcome::Collapsed)
    } else if q_s == 0.0 {
        (Some(mix.comp_out), UpdateOutcome::Collapsed)
    } else {
        let (first, second) = match options.variance_mode {
            VarianceMode::Weighted => ((VarianceMode::Weighted, weighted), (VarianceMode::Exact, exact)),
            VarianceMode::Exact => ((VarianceMode::Exact, exact), (VarianceMode::Weighted, weighted)),
        };
        match fit_beta_from_moments(first.1 .0, first.1 .1) {
            Ok(p) => (Some(p), UpdateOutcome::Matched(first.0)),
            Err(_) => match fit_beta_from_moments(second.1 .0, second.1 .1) {
                Ok(p) => {
                    log::warn!("{}: {} moments infeasible, used {}", rel.operator_id, first.0.as_str(), second.0.as_str());
                    (Some(p), UpdateOutcome::FellBack(second.0))
                }
                Err(_) => {
                    log::warn!("{}: moments infeasible in both modes, reliability held", rel.operator_id);
                    (None, UpdateOutcome::Held)
                }
            },
        }
    };
    let state = match params {
        Some(p) => ReliabilityState { operator_id: rel.operator_id, alpha: p.alpha, beta: p.beta },
        None => *rel,
    };
    Ok(ReliabilityUpdate {
        state,
        outcome,
        record: LearningRecord {
            t: sketch.t,
            operator_id: rel.operator_id.0,
            q_s,
            enclosed: sketch.enclosed(),
            mode: outcome.label(),
            alpha_before: rel.alpha,
            beta_before: rel.beta,
            alpha_after: state.alpha,
            beta_after: state.beta,
            mean_after: state.mean(),
            weighted_variance: weighted.1,
            exact_variance: exact.1,
        },
    })
}
