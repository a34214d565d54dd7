//! Reference computations for checking the tracker.
//!
//! Everything in here is deliberately naive: numerical quadrature instead of
//! closed forms, full path enumeration instead of recursion, sampling instead
//! of moment algebra. None of it depends on `sketchfuse-core`, so agreement
//! between the two is real evidence and not an echo of shared code.

pub mod geometry;
pub mod hmm;
pub mod mixture;
pub mod quadrature;

pub use geometry::{count_in_disc, point_in_polygon_winding};
pub use hmm::{dense_gaussian_kernel, forward_by_enumeration};
pub use mixture::{beta_moments, sample_mixture_moments, MixtureSample};
pub use quadrature::{integrate_unit_interval, QuadratureError};

/// Gaussian density evaluated directly (no log space).
pub fn gaussian_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Marginal sketch likelihood `E[(a^d (1-a)^(M-d))^w]` under `a ~ Beta(alpha, beta)`,
/// evaluated as a ratio of two quadratures so that no Beta or Gamma function
/// is involved.
pub fn sketch_marginal_by_quadrature(
    alpha: f64,
    beta: f64,
    weight: f64,
    enclosed: u32,
    inside: bool,
    rel_tol: f64,
) -> Result<f64, QuadratureError> {
    let delta = if inside { 1.0 } else { 0.0 };
    let m = enclosed as f64;
    let p = weight * delta + alpha - 1.0;
    let q = weight * (m - delta) + beta - 1.0;
    let numerator = integrate_unit_interval(|a, one_minus_a| a.powf(p) * one_minus_a.powf(q), rel_tol)?;
    let normaliser = integrate_unit_interval(|a, one_minus_a| a.powf(alpha - 1.0) * one_minus_a.powf(beta - 1.0), rel_tol)?;
    Ok(numerator / normaliser)
}

/// Closed-loop reliability update written straight from the moment formulas,
/// without any of the collapse shortcuts or fallbacks the production code has.
pub fn reference_reliability_update(alpha: f64, beta: f64, weight: f64, enclosed: u32, enclosed_mass: f64) -> (f64, f64) {
    let m = enclosed as f64;
    let q = enclosed_mass;
    let s = weight * m + alpha + beta;
    let mean = (q * (weight + alpha) + (1.0 - q) * alpha) / s;
    let var = (q * q * (weight + alpha) * (weight * (m - 1.0) + beta) + (1.0 - q) * (1.0 - q) * alpha * (weight * m + beta))
        / (s * s * (s + 1.0));
    let nu = mean * (1.0 - mean) / var - 1.0;
    (mean * nu, (1.0 - mean) * nu)
}
