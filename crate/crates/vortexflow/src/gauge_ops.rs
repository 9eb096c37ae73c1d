//! The complex-gauge side of the theory: the scalar h-flow, Newton
//! projection onto the vortex equation, Coulomb gauge fixing, and
//! gauge-invariant comparison of states.
//!
//! Everything here works with the scalar `σ = ½ log h` of the polar
//! decomposition `g = e^{σ+iθ}`: the flow stays in one complex-gauge orbit,
//! so the state at time t is `e^{σ_t}·(A₀, u₀)` up to a unitary gauge that
//! is never reconstructed. The scalar moment of the transformed state is
//!
//! ```text
//! f_σ = *F_{A₀} − Δσ + ½(τ − e^{2σ}|u₀|²)
//! ```
//!
//! with `Δ` the composite `d*d` Laplacian, and the h-flow is `σ̇ = f_σ`
//! with `σ = 0` on the boundary. Setting `f_σ = 0` is the scalar vortex
//! equation, solved by Newton in [`project_to_vortex`].

use crate::fields::{
    apply_complex_gauge, apply_unitary_gauge, codifferential, curvature, wide_laplacian,
    ComplexGauge, Connection, State, UnitaryGauge,
};
use crate::grid::Grid;
use crate::moment::{moment_density, vortex_count};
use crate::newton::{newton_solve, solve_banded_operator, NewtonError, SolveReport};
use crate::spectral::{phi1, SpectralBasis, SpectralError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaugeError {
    #[error("operation requires rectangle topology")]
    NeedsRectangle,
    #[error("bundle degrees differ: {0} vs {1}")]
    DegreeMismatch(i32, i32),
    #[error("h-flow monotonicity violated after 20 dt halvings at t = {0}")]
    Monotonicity(f64),
    #[error("NaN during h-flow at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Newton(#[from] NewtonError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Samples of the h-flow scalar, Dirichlet on the boundary, `σ(0) = 0`.
#[derive(Clone, Debug, Serialize)]
pub struct SigmaTrajectory {
    pub times: Vec<f64>,
    pub sigmas: Vec<Vec<f64>>,
    /// Interior L² norm of `f_σ` at each sample.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
}

/// Per-node and scalar quantities unchanged by unitary gauge.
#[derive(Clone, Debug, Serialize)]
pub struct GaugeInvariantRecord {
    pub abs_u: Vec<f64>,
    pub curvature: Vec<f64>,
    pub f: Vec<f64>,
    pub f_l2: f64,
    pub vortex_count: i64,
    pub flux: f64,
}

pub struct ProjectionOutcome {
    pub sigma: Vec<f64>,
    pub vortex: State,
    pub report: SolveReport,
    /// Estimated norm of the inverse linearization `(Δ + |u|²)⁻¹` at σ = 0.
    pub c_est: f64,
    /// Whether `‖σ‖_{L²} ≤ 8·C_est·‖f₀‖_{L²}` held (warning-level bound).
    pub bound_ok: bool,
    pub sigma_l2: f64,
    pub f0_l2: f64,
}

/// The scalar moment of `e^σ·base` evaluated by formula; agrees with
/// `moment_density(reconstruct_state(base, σ))` node for node.
pub fn sigma_moment(base: &State, sigma: &[f64]) -> Vec<f64> {
    let g = &base.grid;
    let curv0 = curvature(base);
    let lap = wide_laplacian(g, sigma);
    (0..g.node_count)
        .map(|k| {
            curv0[k] - lap[k]
                + 0.5 * (base.tau - (2.0 * sigma[k]).exp() * base.u.values[k].norm_sqr())
        })
        .collect()
}

/// `apply_complex_gauge(base, σ, θ = 0)`.
pub fn reconstruct_state(base: &State, sigma: &[f64]) -> State {
    apply_complex_gauge(
        base,
        &ComplexGauge { sigma: sigma.to_vec(), theta: vec![0.0; base.grid.node_count] },
    )
}

fn interior_indices(grid: &Grid) -> Vec<usize> {
    (0..grid.node_count).filter(|&k| !grid.boundary_mask[k]).collect()
}

/// Quadrature L² norm over interior nodes (all nodes on the torus); the
/// boundary carries the Dirichlet datum `f = 0` of the flow formulation.
pub fn interior_l2(grid: &Grid, field: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..grid.node_count {
        if !grid.boundary_mask[k] {
            acc += field[k] * field[k] * grid.area_weight[k];
        }
    }
    acc.sqrt()
}

/// Gauge-invariant h-flow `σ̇ = f_σ`, stepped by the same exponential IMEX
/// scheme as the augmented system: the five-point heat part exactly, the
/// rest (including the stencil difference between the composite and
/// five-point Laplacians) explicitly.
pub fn hflow_run(
    base: &State,
    basis: &SpectralBasis,
    dt: f64,
    t_end: f64,
    tolerance: f64,
    output_every: usize,
) -> Result<SigmaTrajectory, GaugeError> {
    let g = &base.grid;
    let n = g.node_count;
    let curv0 = curvature(base);
    let abs_u_sq: Vec<f64> = base.u.values.iter().map(|z| z.norm_sqr()).collect();

    let residual = |sigma: &[f64]| -> Vec<f64> {
        let lap = wide_laplacian(g, sigma);
        (0..n)
            .map(|k| {
                curv0[k] - lap[k] + 0.5 * (base.tau - (2.0 * sigma[k]).exp() * abs_u_sq[k])
            })
            .collect()
    };

    let mut sigma = vec![0.0; n];
    let mut t = 0.0;
    let mut dt = dt;
    let mut step = 0usize;
    let mut halvings = 0usize;

    let mut traj = SigmaTrajectory {
        times: vec![0.0],
        sigmas: vec![sigma.clone()],
        residual_norms: vec![interior_l2(g, &residual(&sigma))],
        converged: false,
    };
    if traj.residual_norms[0] < tolerance {
        traj.converged = true;
        return Ok(traj);
    }

    let mut res_prev = traj.residual_norms[0];
    while t < t_end - 1e-14 {
        let step_dt = dt.min(t_end - t);
        // N(σ) = (Δ₅ − Δ_wide)σ + *F₀ + ½(τ − e^{2σ}|u₀|²)
        let lap5 = crate::fields::laplacian5(g, &sigma);
        let lapw = wide_laplacian(g, &sigma);
        let mut nonlin = vec![0.0; n];
        for k in 0..n {
            nonlin[k] = (lap5[k] - lapw[k])
                + curv0[k]
                + 0.5 * (base.tau - (2.0 * sigma[k]).exp() * abs_u_sq[k]);
        }
        let mut sm = basis.to_modes(&sigma)?;
        let nm = basis.to_modes(&nonlin)?;
        for q in 0..sm.ncols() {
            for p in 0..sm.nrows() {
                let z = -basis.lambda_pq(p, q) * step_dt;
                sm[(p, q)] = z.exp() * sm[(p, q)] + step_dt * phi1(z) * nm[(p, q)];
            }
        }
        let candidate = basis.from_modes(&sm);
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(GaugeError::NonFinite(t));
        }
        let res_new = interior_l2(g, &residual(&candidate));
        if res_new > res_prev * (1.0 + 1e-10) + 1e-12 {
            halvings += 1;
            if halvings > 20 {
                return Err(GaugeError::Monotonicity(t));
            }
            dt *= 0.5;
            continue;
        }
        sigma = candidate;
        res_prev = res_new;
        t += step_dt;
        step += 1;
        if step % output_every == 0 {
            traj.times.push(t);
            traj.sigmas.push(sigma.clone());
            traj.residual_norms.push(res_new);
        }
        if res_new < tolerance {
            traj.converged = true;
            break;
        }
    }
    if traj.times.last().copied() != Some(t) {
        traj.times.push(t);
        traj.sigmas.push(sigma.clone());
        traj.residual_norms.push(res_prev);
    }
    Ok(traj)
}

fn banded_width(grid: &Grid) -> usize {
    // the composite Laplacian couples nodes at most two rows/columns away
    2 * (grid.ncols - 2) + 2
}

/// Solve `(Δ_wide + pot)·x = rhs` on interior nodes with zero Dirichlet data.
fn solve_interior_elliptic(
    grid: &Grid,
    interior: &[usize],
    pot: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>, NewtonError> {
    let m = interior.len();
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; grid.node_count];
        for (slot, &k) in interior.iter().enumerate() {
            full[k] = x[slot];
        }
        let lap = wide_laplacian(grid, &full);
        interior
            .iter()
            .enumerate()
            .map(|(slot, &k)| lap[k] + pot[k] * x[slot])
            .collect()
    };
    solve_banded_operator(m, banded_width(grid), &apply, rhs)
}

/// Estimate `‖(Δ_wide + pot)⁻¹‖` by power iteration on the inverse.
fn estimate_inverse_norm(grid: &Grid, interior: &[usize], pot: &[f64]) -> f64 {
    let m = interior.len();
    let mut v: Vec<f64> = (0..m).map(|k| ((k * 2654435761) % 1000) as f64 / 1000.0 + 0.1).collect();
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut estimate = 0.0;
    for _ in 0..40 {
        let nv = norm(&v);
        for x in v.iter_mut() {
            *x /= nv;
        }
        match solve_interior_elliptic(grid, interior, pot, &v) {
            Ok(next) => {
                estimate = norm(&next);
                v = next;
            }
            Err(_) => return f64::INFINITY,
        }
    }
    estimate
}

/// Newton solve of the scalar vortex equation `f_σ = 0` with `σ|∂ = 0`.
pub fn project_to_vortex(state: &State, tol: f64) -> Result<ProjectionOutcome, GaugeError> {
    if state.grid.is_torus() {
        return Err(GaugeError::NeedsRectangle);
    }
    let g = state.grid.clone();
    let interior = interior_indices(&g);
    let curv0 = curvature(state);
    let abs_u_sq: Vec<f64> = state.u.values.iter().map(|z| z.norm_sqr()).collect();
    let n = g.node_count;

    let embed = |active: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; n];
        for (slot, &k) in interior.iter().enumerate() {
            full[k] = active[slot];
        }
        full
    };
    let residual = |active: &[f64]| -> Vec<f64> {
        let full = embed(active);
        let lap = wide_laplacian(&g, &full);
        interior
            .iter()
            .map(|&k| curv0[k] - lap[k] + 0.5 * (state.tau - (2.0 * full[k]).exp() * abs_u_sq[k]))
            .collect()
    };
    let lin_solve = |active: &[f64], r: &[f64]| -> Result<Vec<f64>, NewtonError> {
        // J = −(Δ_wide + e^{2σ}|u₀|²); Newton step solves J d = r, i.e.
        // (Δ_wide + pot)(−d) = r
        let full = embed(active);
        let pot: Vec<f64> =
            (0..n).map(|k| (2.0 * full[k]).exp() * abs_u_sq[k]).collect();
        let d = solve_interior_elliptic(&g, &interior, &pot, r)?;
        Ok(d.iter().map(|v| -v).collect())
    };
    let weights: Vec<f64> = interior.iter().map(|&k| g.area_weight[k]).collect();
    let norm = move |v: &[f64]| -> f64 {
        v.iter()
            .zip(weights.iter())
            .map(|(x, w)| x * x * w)
            .sum::<f64>()
            .sqrt()
    };

    let x0 = vec![0.0; interior.len()];
    let report = newton_solve(&residual, &lin_solve, &norm, &x0, tol, 25)?;
    let sigma = embed(&report.solution);
    let vortex = reconstruct_state(state, &sigma);

    let pot0: Vec<f64> = abs_u_sq.clone();
    let c_est = estimate_inverse_norm(&g, &interior, &pot0);
    let f0 = moment_density(state);
    let f0_l2 = interior_l2(&g, &f0);
    let sigma_l2 = g.l2_norm_scalar(&sigma);
    let bound_ok = sigma_l2 <= 8.0 * c_est * f0_l2;
    Ok(ProjectionOutcome { sigma, vortex, report, c_est, bound_ok, sigma_l2, f0_l2 })
}

/// Gauge transform `A ↦ A − dθ` with `Δθ = d*(A − A_ref)`, so the result
/// satisfies `d*(A' − A_ref) = 0` on interior nodes (mean-zero θ on the
/// torus, zero Dirichlet θ on the rectangle).
pub fn coulomb_gauge(
    state: &State,
    reference: &Connection,
    basis: &SpectralBasis,
) -> Result<(Vec<f64>, State), GaugeError> {
    if state.a.degree != reference.degree {
        return Err(GaugeError::DegreeMismatch(state.a.degree, reference.degree));
    }
    let g = &state.grid;
    let n = g.node_count;
    let bx: Vec<f64> = (0..n).map(|k| state.a.ax[k] - reference.ax[k]).collect();
    let by: Vec<f64> = (0..n).map(|k| state.a.ay[k] - reference.ay[k]).collect();
    let rhs = codifferential(g, &bx, &by);

    let theta = if g.is_torus() {
        // the composite operator is diagonal in the Fourier basis with the
        // sin² symbol; its kernel (constants and checkerboards) is
        // orthogonal to the right-hand side
        let mut coeffs = basis.to_modes(&rhs)?;
        let scale = 1.0 / (g.h * g.h);
        for q in 0..coeffs.ncols() {
            for p in 0..coeffs.nrows() {
                let lam = basis.lambda_wide_pq(p, q);
                if lam < 1e-12 * scale {
                    coeffs[(p, q)] = 0.0;
                } else {
                    coeffs[(p, q)] /= lam;
                }
            }
        }
        basis.from_modes(&coeffs)
    } else {
        let interior = interior_indices(g);
        let rhs_active: Vec<f64> = interior.iter().map(|&k| rhs[k]).collect();
        let pot = vec![0.0; n];
        let active = solve_interior_elliptic(g, &interior, &pot, &rhs_active)?;
        let mut full = vec![0.0; n];
        for (slot, &k) in interior.iter().enumerate() {
            full[k] = active[slot];
        }
        full
    };
    let gauged = apply_unitary_gauge(state, &UnitaryGauge { theta: theta.clone() });
    Ok((theta, gauged))
}

pub fn gauge_invariants(state: &State) -> GaugeInvariantRecord {
    let g = &state.grid;
    let f = moment_density(state);
    let curv = curvature(state);
    GaugeInvariantRecord {
        abs_u: state.u.values.iter().map(|z| z.norm()).collect(),
        f_l2: g.l2_norm_scalar(&f),
        flux: g.integrate(&curv).expect("shape by construction"),
        curvature: curv,
        vortex_count: vortex_count(state).0,
        f,
    }
}

/// Finite-difference derivative samples of `t ↦ ⟨f(e^{itŝ}·state), ŝ⟩` along
/// the complexified direction of `ŝ` (which scales `u` by `e^{−tŝ}`); the
/// sequence is nondecreasing, which forces at most one vortex per orbit line.
pub fn kempf_ness_derivatives(
    state: &State,
    direction: &[f64],
    t_max: f64,
    samples: usize,
) -> Vec<f64> {
    assert!(samples >= 2);
    let g = &state.grid;
    let n = g.node_count;
    let dt = t_max / (samples - 1) as f64;
    let pairing: Vec<f64> = (0..samples)
        .map(|s| {
            let t = s as f64 * dt;
            let sigma: Vec<f64> = direction.iter().map(|v| -t * v).collect();
            let f = sigma_moment(state, &sigma);
            let mut acc = 0.0;
            for k in 0..n {
                acc += f[k] * direction[k] * g.area_weight[k];
            }
            acc
        })
        .collect();
    pairing.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
}
