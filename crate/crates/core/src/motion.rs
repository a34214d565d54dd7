//! Constant-velocity transition model on the particle grid.
//!
//! Transition `j -> i` is the isotropic Gaussian density with mean
//! `l_j + v T_s` and per-axis variance `T_s^2 sigma_p^2 / 2`, evaluated at
//! `l_i` and normalised per source row. Mass that would land outside the
//! workspace is folded back in by that normalisation.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ParticleGrid;
use crate::tracker::Belief;

/// Target velocity and the velocity it started from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityState {
    pub v: Vector2<f64>,
    pub v0: Vector2<f64>,
}

impl VelocityState {
    pub fn new(v0: Vector2<f64>) -> Self {
        Self { v: v0, v0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    /// Entries strictly below this (after row normalisation) are dropped and
    /// the row renormalised. Zero keeps every representable entry.
    pub prune_below: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { prune_below: 0.0 }
    }
}

/// Sparse row-stochastic transition matrix, stored by source particle.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    rows: Vec<Vec<(usize, f64)>>,
    velocity: Vector2<f64>,
    sigma_p: f64,
    t_s: f64,
    truncated_rows: Vec<usize>,
}

impl TransitionKernel {
    /// Build from explicit dense rows (`rows[j][i] = p(i | j)`), e.g. for
    /// hand-made chains. Rows must be nonnegative and sum to one.
    pub fn from_dense(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut sparse = Vec::with_capacity(n);
        for (j, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: row.len() });
            }
            if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::param("transition", format!("row {j} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::param("transition", format!("row {j} sums to {total}")));
            }
            sparse.push(row.into_iter().enumerate().filter(|(_, v)| *v > 0.0).collect());
        }
        Ok(Self { rows: sparse, velocity: Vector2::zeros(), sigma_p: f64::NAN, t_s: f64::NAN, truncated_rows: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Nonzero `(destination, probability)` pairs out of particle `j`.
    pub fn row(&self, j: usize) -> &[(usize, f64)] {
        &self.rows[j]
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.rows[from].iter().find(|(i, _)| *i == to).map(|(_, p)| *p).unwrap_or(0.0)
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        self.rows
            .iter()
            .map(|row| {
                let mut d = vec![0.0; n];
                for &(i, p) in row {
                    d[i] = p;
                }
                d
            })
            .collect()
    }

    pub fn velocity(&self) -> Vector2<f64> {
        self.velocity
    }

    pub fn sigma_p(&self) -> f64 {
        self.sigma_p
    }

    pub fn t_s(&self) -> f64 {
        self.t_s
    }

    /// Per-axis standard deviation of one step's displacement.
    pub fn step_std(&self) -> f64 {
        step_std(self.sigma_p, self.t_s)
    }

    /// Source rows whose Gaussian underflowed everywhere on the grid and were
    /// replaced by a point mass on the nearest particle.
    pub fn truncated_rows(&self) -> &[usize] {
        &self.truncated_rows
    }
}

/// Per-axis displacement standard deviation `sqrt(T_s^2 / 2) * sigma_p`.
pub fn step_std(sigma_p: f64, t_s: f64) -> f64 {
    (t_s * t_s / 2.0).sqrt() * sigma_p
}

fn check_motion_params(sigma_p: f64, t_s: f64) -> Result<()> {
    if !(sigma_p > 0.0) || !sigma_p.is_finite() {
        return Err(Error::param("sigma_p", format!("must be positive, got {sigma_p}")));
    }
    if !(t_s > 0.0) || !t_s.is_finite() {
        return Err(Error::param("T_s", format!("must be positive, got {t_s}")));
    }
    Ok(())
}

/// Below this log ratio `exp` returns zero anyway.
const UNDERFLOW_LOG: f64 = -746.0;

pub fn build_kernel(grid: &ParticleGrid, v: &VelocityState, sigma_p: f64, t_s: f64) -> Result<TransitionKernel> {
    build_kernel_with(grid, v, sigma_p, t_s, KernelOptions::default())
}

pub fn build_kernel_with(
    grid: &ParticleGrid,
    v: &VelocityState,
    sigma_p: f64,
    t_s: f64,
    options: KernelOptions,
) -> Result<TransitionKernel> {
    check_motion_params(sigma_p, t_s)?;
    if !v.v.iter().all(|c| c.is_finite()) {
        return Err(Error::param("velocity", "components must be finite"));
    }
    let variance = t_s * t_s / 2.0 * sigma_p * sigma_p;
    let log_norm = -(2.0 * std::f64::consts::PI * variance).ln();
    let shift = v.v * t_s;
    let positions = grid.positions();
    let mut rows = Vec::with_capacity(positions.len());
    let mut truncated_rows = Vec::new();
    let mut log_density = vec![0.0; positions.len()];

    for (j, from) in positions.iter().enumerate() {
        let mean = from + shift;
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, to) in positions.iter().enumerate() {
            let ld = -(to - mean).norm_squared() / (2.0 * variance);
            log_density[i] = ld;
            if ld > best.1 {
                best = (i, ld);
            }
        }
        // Direct evaluation of the largest density would underflow: the mean
        // is far outside the grid.
        if (best.1 + log_norm).exp() == 0.0 {
            truncated_rows.push(j);
            rows.push(vec![(best.0, 1.0)]);
            continue;
        }
        let mut row: Vec<(usize, f64)> = log_density
            .iter()
            .enumerate()
            .filter(|(_, ld)| *ld - best.1 > UNDERFLOW_LOG)
            .map(|(i, ld)| (i, (ld - best.1).exp()))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        normalise_row(&mut row);
        if options.prune_below > 0.0 {
            row.retain(|(_, w)| *w >= options.prune_below);
            normalise_row(&mut row);
        }
        rows.push(row);
    }
    if !truncated_rows.is_empty() {
        log::warn!("transition kernel: {} rows fell back to a nearest-particle point mass", truncated_rows.len());
    }
    Ok(TransitionKernel { rows, velocity: v.v, sigma_p, t_s, truncated_rows })
}

fn normalise_row(row: &mut [(usize, f64)]) {
    let total: f64 = row.iter().map(|(_, w)| w).sum();
    for (_, w) in row.iter_mut() {
        *w /= total;
    }
}

/// Chapman-Kolmogorov step: `q'_i = sum_j K[j -> i] q_j`.
pub fn predict(belief: &Belief, kernel: &TransitionKernel) -> Result<Belief> {
    if belief.len() != kernel.len() {
        return Err(Error::DimensionMismatch { expected: kernel.len(), got: belief.len() });
    }
    let mut next = vec![0.0; belief.len()];
    for (j, &q) in belief.weights().iter().enumerate() {
        if q == 0.0 {
            continue;
        }
        for &(i, p) in kernel.row(j) {
            next[i] += p * q;
        }
    }
    Belief::from_weights(next, belief.t() + 1)
}

/// Random-walk velocity step with per-axis variance `T_s sigma_p^2`.
pub fn sample_velocity<R: Rng + ?Sized>(v: &VelocityState, sigma_p: f64, t_s: f64, rng: &mut R) -> VelocityState {
    let std = (t_s * sigma_p * sigma_p).sqrt();
    if std == 0.0 {
        return *v;
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    VelocityState { v: v.v + Vector2::new(normal.sample(rng), normal.sample(rng)), v0: v.v0 }
}

/// Which velocity the filter feeds into its transition kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocityMode {
    /// Always the configured `v0`.
    #[default]
    Fixed,
    /// Exponentially smoothed finite difference of successive MMSE estimates.
    MmseDiff,
}

/// Smoothing factor for [`VelocityMode::MmseDiff`].
pub const MMSE_DIFF_SMOOTHING: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Bounds};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid3() -> ParticleGrid {
        build_grid(Bounds::new([0.0, 3.0], [0.0, 3.0]).unwrap(), 3, 3).unwrap()
    }

    #[test]
    fn rows_are_distributions() {
        let g = grid3();
        let k = build_kernel(&g, &VelocityState::new(Vector2::new(1.0, -0.3)), 0.7, 0.4).unwrap();
        for j in 0..k.len() {
            let s: f64 = k.row(j).iter().map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(k.row(j).iter().all(|(_, p)| *p >= 0.0));
        }
    }

    #[test]
    fn vanishing_noise_gives_identity() {
        let g = grid3();
        let k = build_kernel(&g, &VelocityState::new(Vector2::zeros()), 1e-6, 1.0).unwrap();
        for j in 0..9 {
            assert_eq!(k.row(j), &[(j, 1.0)]);
        }
    }

    #[test]
    fn interior_mode_is_right_neighbour() {
        // 3x3 lattice, spacing 1 m, v = (1, 0), T_s = 1: mean lands on the right neighbour.
        let g = grid3();
        let k = build_kernel(&g, &VelocityState::new(Vector2::new(1.0, 0.0)), 1.0, 1.0).unwrap();
        // Rows with a right neighbour: columns 0 and 1.
        for r in 0..3 {
            for c in 0..2 {
                let j = r * 3 + c;
                let (mode, _) = k.row(j).iter().cloned().fold((usize::MAX, -1.0), |acc, e| if e.1 > acc.1 { e } else { acc });
                assert_eq!(mode, j + 1);
            }
        }
        // Hand check for the center row (j = 4): var = 1/2, so each unit of
        // squared distance costs a factor e^-1 relative to the mode.
        let d: Vec<f64> = [5.0f64, 2.0, 1.0, 4.0, 1.0, 0.0, 5.0, 2.0, 1.0].iter().map(|d2| (-d2).exp()).collect();
        let total: f64 = d.iter().sum();
        for (i, di) in d.iter().enumerate() {
            assert_relative_eq!(k.entry(4, i), di / total, max_relative = 1e-12);
        }
    }

    #[test]
    fn step_statistics_match_motion_model() {
        let g = grid3();
        let k = build_kernel(&g, &VelocityState::new(Vector2::new(1.0, 1.0)), 0.5, 0.1).unwrap();
        assert_relative_eq!(k.velocity() * k.t_s(), Vector2::new(0.1, 0.1), epsilon = 1e-15);
        assert_relative_eq!(k.step_std(), 0.035355339059327376, epsilon = 1e-15);
    }

    #[test]
    fn far_outside_mean_falls_back_to_nearest() {
        let g = grid3();
        let k = build_kernel(&g, &VelocityState::new(Vector2::new(1e4, 0.0)), 0.1, 1.0).unwrap();
        assert_eq!(k.truncated_rows().len(), 9);
        // Right-most column is nearest for every row.
        assert_eq!(k.row(0), &[(2, 1.0)]);
        assert_eq!(k.row(4), &[(5, 1.0)]);
    }

    #[test]
    fn prune_option_drops_small_entries() {
        let g = grid3();
        let v = VelocityState::new(Vector2::new(0.2, 0.0));
        let full = build_kernel(&g, &v, 0.5, 1.0).unwrap();
        let pruned = build_kernel_with(&g, &v, 0.5, 1.0, KernelOptions { prune_below: 1e-3 }).unwrap();
        assert!(pruned.row(0).len() < full.row(0).len());
        let s: f64 = pruned.row(0).iter().map(|(_, p)| p).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_params() {
        let g = grid3();
        let v = VelocityState::new(Vector2::zeros());
        assert!(build_kernel(&g, &v, 0.0, 1.0).is_err());
        assert!(build_kernel(&g, &v, 1.0, -1.0).is_err());
    }

    #[test]
    fn predict_hand_chain() {
        let k = TransitionKernel::from_dense(vec![vec![0.8, 0.2, 0.0], vec![0.1, 0.8, 0.1], vec![0.0, 0.2, 0.8]]).unwrap();
        let q = Belief::point_mass(3, 0);
        let p = predict(&q, &k).unwrap();
        assert_relative_eq!(p.weights()[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(p.weights()[1], 0.2, epsilon = 1e-15);
        assert_eq!(p.weights()[2], 0.0);
        assert_eq!(p.t(), 1);
    }

    #[test]
    fn predict_point_mass_is_kernel_row() {
        let g = grid3();
        let k = build_kernel(&g, &VelocityState::new(Vector2::new(0.5, 0.5)), 1.0, 1.0).unwrap();
        let p = predict(&Belief::point_mass(9, 4), &k).unwrap();
        for i in 0..9 {
            assert_relative_eq!(p.weights()[i], k.entry(4, i), epsilon = 1e-15);
        }
    }

    #[test]
    fn uniform_stays_uniform_under_doubly_stochastic() {
        let k = TransitionKernel::from_dense(vec![vec![0.5, 0.25, 0.25], vec![0.25, 0.5, 0.25], vec![0.25, 0.25, 0.5]]).unwrap();
        let p = predict(&Belief::uniform(3), &k).unwrap();
        for w in p.weights() {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn predict_dimension_mismatch() {
        let k = TransitionKernel::from_dense(vec![vec![1.0]]).unwrap();
        assert!(matches!(predict(&Belief::uniform(2), &k), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_sigma_velocity_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = VelocityState::new(Vector2::new(1.0, 1.0));
        assert_eq!(sample_velocity(&v, 0.0, 0.1, &mut rng), v);
    }

    #[test]
    fn velocity_noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = VelocityState::new(Vector2::new(1.0, 1.0));
        let n = 100_000;
        let (mut sx, mut sy, mut sxx) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let s = sample_velocity(&v, 0.5, 0.1, &mut rng);
            sx += s.v.x;
            sy += s.v.y;
            sxx += (s.v.x - 1.0) * (s.v.x - 1.0);
        }
        let n = n as f64;
        assert!((sx / n - 1.0).abs() < 0.005);
        assert!((sy / n - 1.0).abs() < 0.005);
        let std = (sxx / n).sqrt();
        let expected = (0.1f64 * 0.25).sqrt();
        assert!((std / expected - 1.0).abs() < 0.02, "std {std} vs {expected}");
    }
}
