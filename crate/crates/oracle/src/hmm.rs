//! Brute-force HMM marginals by summing over every state path.

/// Dense row-stochastic Gaussian transition matrix, `rows[j][i] = p(i | j)`.
///
/// Density is `exp(-|l_i - l_j - v dt|^2 / (2 var))`, normalised per row by a
/// plain sum. No truncation, no log space.
pub fn dense_gaussian_kernel(positions: &[[f64; 2]], velocity: [f64; 2], dt: f64, variance: f64) -> Vec<Vec<f64>> {
    positions
        .iter()
        .map(|from| {
            let mean = [from[0] + velocity[0] * dt, from[1] + velocity[1] * dt];
            let row: Vec<f64> = positions
                .iter()
                .map(|to| {
                    let dx = to[0] - mean[0];
                    let dy = to[1] - mean[1];
                    (-(dx * dx + dy * dy) / (2.0 * variance)).exp()
                })
                .collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|v| v / total).collect()
        })
        .collect()
}

/// Filtering marginal `p(x_T | o_1..o_T)` by enumerating all `N^(T+1)` paths.
///
/// `likelihoods[t]` is the (unnormalised) observation likelihood at step
/// `t + 1`. Returns the normalised marginal over the final state. Intended for
/// `N <= 16`, `T <= 4`.
pub fn forward_by_enumeration(prior: &[f64], transition: &[Vec<f64>], likelihoods: &[Vec<f64>]) -> Vec<f64> {
    let n = prior.len();
    let horizon = likelihoods.len();
    let mut marginal = vec![0.0; n];
    let mut path = vec![0usize; horizon + 1];
    loop {
        let mut p = prior[path[0]];
        for t in 1..=horizon {
            if p == 0.0 {
                break;
            }
            p *= transition[path[t - 1]][path[t]] * likelihoods[t - 1][path[t]];
        }
        marginal[path[horizon]] += p;

        // odometer increment
        let mut k = 0;
        loop {
            if k > horizon {
                let total: f64 = marginal.iter().sum();
                return marginal.into_iter().map(|v| v / total).collect();
            }
            path[k] += 1;
            if path[k] < n {
                break;
            }
            path[k] = 0;
            k += 1;
        }
    }
}
