use sketchfuse_core::grid::Layout;
use sketchfuse_core::{Belief, ParticleGrid};

use crate::wire::Heatmap;

/// Raster size used for grids without a lattice layout.
const IRREGULAR_RASTER: usize = 32;

/// Pool the belief into blocks of `factor x factor` cells by summing, so the
/// heatmap keeps the belief's total mass. Factor 1 is the full grid.
pub fn heatmap(grid: &ParticleGrid, belief: &Belief, factor: usize) -> Heatmap {
    let factor = factor.max(1);
    match grid.layout() {
        Layout::Regular { rows, cols } => {
            let (out_rows, out_cols) = (rows.div_ceil(factor), cols.div_ceil(factor));
            let mut values = vec![0.0; out_rows * out_cols];
            for (i, w) in belief.weights().iter().enumerate() {
                let (r, c) = (i / cols, i % cols);
                values[(r / factor) * out_cols + c / factor] += w;
            }
            Heatmap { rows: out_rows, cols: out_cols, values }
        }
        Layout::Irregular => {
            let n = (IRREGULAR_RASTER / factor).max(1);
            let b = grid.bounds();
            let mut values = vec![0.0; n * n];
            for (p, w) in grid.positions().iter().zip(belief.weights()) {
                let bin = |v: f64, lo: f64, span: f64| (((v - lo) / span * n as f64) as usize).min(n - 1);
                values[bin(p.y, b.y[0], b.height()) * n + bin(p.x, b.x[0], b.width())] += w;
            }
            Heatmap { rows: n, cols: n, values }
        }
    }
}
