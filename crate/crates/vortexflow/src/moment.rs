//! The functional, its gradient, the energy and the scalar diagnostics.
//!
//! The driving scalar is `f = *F_A + Φ(u)` with `Φ(u) = ½(τ − |u|²)`; the
//! functional is `½‖f‖²_{L²}`, normalized so that the flow equations are
//! literally its gradient flow. The descent direction is `Ȧ = *df`,
//! `u̇ = f·u`.

use crate::fields::{curvature, covariant_derivative, dbar, dx_scalar, dy_scalar, State};
use crate::grid::FieldRef;
use num_complex::Complex64;
use serde::Serialize;

/// One row of scalar diagnostics for a state.
#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    pub functional: f64,
    pub energy: f64,
    pub dbar_l2: f64,
    pub f_l2: f64,
    pub f_max: f64,
    pub flux: f64,
    pub min_abs_u: f64,
    pub energy_identity_residual: f64,
}

/// `f = *F_A + ½(τ − |u|²)` per node.
pub fn moment_density(state: &State) -> Vec<f64> {
    let curv = curvature(state);
    curv.iter()
        .zip(state.u.values.iter())
        .map(|(c, u)| c + 0.5 * (state.tau - u.norm_sqr()))
        .collect()
}

/// `½‖f‖²_{L²}`.
pub fn functional_value(state: &State) -> f64 {
    let f = moment_density(state);
    0.5 * state
        .grid
        .l2_inner(FieldRef::Scalar(&f), FieldRef::Scalar(&f))
        .expect("shapes agree by construction")
}

/// Descent direction of the functional: `Ȧ = *df = (−∂ᶜ_y f, ∂ᶜ_x f)` and
/// `u̇ = f·u`.
pub fn flow_gradient(state: &State) -> (Vec<f64>, Vec<f64>, Vec<Complex64>) {
    let f = moment_density(state);
    let fx = dx_scalar(&state.grid, &f);
    let fy = dy_scalar(&state.grid, &f);
    let adot_x: Vec<f64> = fy.iter().map(|v| -v).collect();
    let adot_y = fx;
    let udot: Vec<Complex64> = state
        .u
        .values
        .iter()
        .zip(f.iter())
        .map(|(u, fv)| u * *fv)
        .collect();
    (adot_x, adot_y, udot)
}

/// `E(A,u) = ½∫ |*F_A|² + |Φ(u)|² + |d_A u|²`.
pub fn energy(state: &State) -> f64 {
    let g = &state.grid;
    let curv = curvature(state);
    let (dx, dy) = covariant_derivative(state);
    let mut density = vec![0.0; g.node_count];
    for k in 0..g.node_count {
        let phi = 0.5 * (state.tau - state.u.values[k].norm_sqr());
        density[k] = 0.5 * (curv[k] * curv[k] + phi * phi + dx[k].norm_sqr() + dy[k].norm_sqr());
    }
    g.integrate(&density).expect("shape by construction")
}

/// Defect of the energy identity
/// `E = ‖∂̄_A u‖² + ½‖f‖² + ∫ u*ω − d⟨Φ(u),A⟩`,
/// where the (0,1)-form norm doubles the per-node value,
/// `u*ω` is the Jacobian determinant density and the last term is the
/// discrete curl of the 1-form `Φ(u)·A`. Vanishes as O(h²) on smooth states.
pub fn energy_identity_residual(state: &State) -> f64 {
    let g = &state.grid;
    let f = moment_density(state);
    let db = dbar(state);
    let u = &state.u.values;

    // plain coordinate derivatives of u for the Jacobian density
    let ux = crate::fields::deriv_complex(g, u, 0);
    let uy = crate::fields::deriv_complex(g, u, 1);

    // Φ(u)·A as a 1-form, including the torus background in a_y
    let bg = state.background_curvature();
    let mut pa_x = vec![0.0; g.node_count];
    let mut pa_y = vec![0.0; g.node_count];
    for j in 0..g.nrows {
        for i in 0..g.ncols {
            let k = g.idx(i, j);
            let phi = 0.5 * (state.tau - u[k].norm_sqr());
            let x = i as f64 * g.h;
            pa_x[k] = phi * state.a.ax[k];
            pa_y[k] = phi * (state.a.ay[k] + bg * x);
        }
    }
    let curl_pa: Vec<f64> = {
        let dxy = dx_scalar(g, &pa_y);
        let dyx = dy_scalar(g, &pa_x);
        dxy.iter().zip(dyx.iter()).map(|(a, b)| a - b).collect()
    };

    let mut rhs_density = vec![0.0; g.node_count];
    for k in 0..g.node_count {
        let jac = (ux[k].conj() * uy[k]).im;
        rhs_density[k] = 2.0 * db[k].norm_sqr() + 0.5 * f[k] * f[k] + jac - curl_pa[k];
    }
    let rhs = g.integrate(&rhs_density).expect("shape by construction");
    energy(state) - rhs
}

/// Total winding of `u` around grid plaquettes; the count ignores cells
/// whose contour carries `|u| < 1e-12`, returning how many were skipped.
pub fn vortex_count(state: &State) -> (i64, usize) {
    let g = &state.grid;
    let u = &state.u.values;
    let (cells_x, cells_y) = (g.spec.nx, g.spec.ny);
    let torus = g.is_torus();
    let mut total = 0i64;
    let mut flagged = 0usize;
    for cj in 0..cells_y {
        for ci in 0..cells_x {
            // counterclockwise corner values, with seam multipliers on the torus
            let corner = |di: usize, dj: usize| -> Complex64 {
                let (mut ii, mut jj) = (ci + di, cj + dj);
                let mut phase = Complex64::new(1.0, 0.0);
                if torus {
                    if ii == g.ncols {
                        ii = 0;
                        // crossing the x-seam upward at height y_jj
                        let y = (jj % g.nrows) as f64 * g.h;
                        let arg = -2.0 * std::f64::consts::PI * state.a.degree as f64 * y
                            / g.spec.ly;
                        phase = Complex64::from_polar(1.0, arg);
                    }
                    if jj == g.nrows {
                        jj = 0;
                    }
                }
                phase * u[g.idx(ii, jj)]
            };
            let loop_vals =
                [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1), corner(0, 0)];
            if loop_vals.iter().any(|z| z.norm() < 1e-12) {
                flagged += 1;
                continue;
            }
            let mut winding = 0.0;
            for w in loop_vals.windows(2) {
                let mut d = w[1].arg() - w[0].arg();
                while d > std::f64::consts::PI {
                    d -= 2.0 * std::f64::consts::PI;
                }
                while d < -std::f64::consts::PI {
                    d += 2.0 * std::f64::consts::PI;
                }
                winding += d;
            }
            total += (winding / (2.0 * std::f64::consts::PI)).round() as i64;
        }
    }
    (total, flagged)
}

pub fn diagnostics(state: &State) -> Diagnostics {
    diagnostics_with_f(state, &moment_density(state))
}

/// Diagnostics with the moment scalar supplied by the caller. Flow drivers
/// on boundary domains pass their own `F` field, which carries the Dirichlet
/// datum `F|∂ = 0` of the flow system; for plain states the composite
/// moment density is the right choice.
pub fn diagnostics_with_f(state: &State, f: &[f64]) -> Diagnostics {
    let g = &state.grid;
    let f_l2 = g.l2_norm_scalar(f);
    let f_max = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let flux = g.integrate(&curvature(state)).expect("shape by construction");
    let min_abs_u = state
        .u
        .values
        .iter()
        .fold(f64::INFINITY, |m, z| m.min(z.norm()));
    Diagnostics {
        functional: 0.5 * f_l2 * f_l2,
        energy: energy(state),
        dbar_l2: g.l2_norm_complex(&dbar(state)),
        f_l2,
        f_max,
        flux,
        min_abs_u,
        energy_identity_residual: energy_identity_residual(state),
    }
}
