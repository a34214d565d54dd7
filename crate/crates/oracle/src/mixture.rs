//! Monte Carlo moments of a two-component Beta mixture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

/// Exact mean and variance of a single Beta(a, b).
pub fn beta_moments(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (a / s, a * b / (s * s * (s + 1.0)))
}

#[derive(Debug, Clone, Copy)]
pub struct MixtureSample {
    pub mean: f64,
    pub variance: f64,
    pub mean_std_error: f64,
    pub variance_std_error: f64,
}

/// Draw `n` samples from `w * Beta(a1, b1) + (1 - w) * Beta(a2, b2)`.
pub fn sample_mixture_moments(weight_first: f64, first: (f64, f64), second: (f64, f64), n: usize, seed: u64) -> MixtureSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = Beta::new(first.0, first.1).expect("valid Beta parameters");
    let d2 = Beta::new(second.0, second.1).expect("valid Beta parameters");
    // Welford accumulation of the first and second moments.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut sq_mean = 0.0;
    let mut sq_m2 = 0.0;
    for k in 1..=n {
        let x: f64 = if rng.random::<f64>() < weight_first { d1.sample(&mut rng) } else { d2.sample(&mut rng) };
        let kf = k as f64;
        let d = x - mean;
        mean += d / kf;
        m2 += d * (x - mean);
        let x2 = x * x;
        let d = x2 - sq_mean;
        sq_mean += d / kf;
        sq_m2 += d * (x2 - sq_mean);
    }
    let nf = n as f64;
    let variance = m2 / (nf - 1.0);
    // Var(sample variance) ~ (mu4 - sigma^4)/n; bound mu4 via Var(x^2) + sigma^4 terms.
    let var_of_sq = sq_m2 / (nf - 1.0);
    MixtureSample {
        mean,
        variance,
        mean_std_error: (variance / nf).sqrt(),
        variance_std_error: ((var_of_sq + 4.0 * mean * mean * variance) / nf).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_mean() {
        let s = sample_mixture_moments(1.0, (3.0, 5.0), (1.0, 1.0), 200_000, 1);
        let (m, v) = beta_moments(3.0, 5.0);
        assert!((s.mean - m).abs() < 4.0 * s.mean_std_error);
        assert!((s.variance - v).abs() < 4.0 * s.variance_std_error);
    }
}
