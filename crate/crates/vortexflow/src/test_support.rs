//! Shared helpers for unit tests.

use crate::grid::Grid;
use crate::rng::Lcg;
use std::f64::consts::PI;

/// Smooth periodic field from a few seeded Fourier modes.
pub(crate) fn smooth_field(grid: &Grid, lcg: &mut Lcg, amplitude: f64) -> Vec<f64> {
    smooth_field_modes(grid, lcg, amplitude, 4)
}

/// Like [`smooth_field`] with an explicit number of Fourier modes; fewer
/// modes give fields that reach the asymptotic refinement regime sooner.
pub(crate) fn smooth_field_modes(
    grid: &Grid,
    lcg: &mut Lcg,
    amplitude: f64,
    modes: usize,
) -> Vec<f64> {
    let mut coeffs = Vec::new();
    for _ in 0..modes {
        coeffs.push((
            lcg.range(-amplitude, amplitude),
            lcg.range(0.0, 2.0 * PI),
            lcg.range(0.0, 2.0 * PI),
        ));
    }
    let mut f = vec![0.0; grid.node_count];
    for j in 0..grid.nrows {
        for i in 0..grid.ncols {
            let (x, y) = grid.coord(i, j);
            let mut v = 0.0;
            for (m, (c, px, py)) in coeffs.iter().enumerate() {
                let k = (m + 1) as f64;
                v += c
                    * (2.0 * PI * k * x / grid.spec.lx + px).sin()
                    * (2.0 * PI * k * y / grid.spec.ly + py).cos();
            }
            f[grid.idx(i, j)] = v;
        }
    }
    f
}
