//! Time integration of the gradient flow.
//!
//! Three routes to the same trajectory:
//!
//! - [`euler_step`]: direct explicit stepping of `(A, u)` on the torus,
//! - [`imex_step`]: the augmented `(a, F, ξ)` system with `F` an independent
//!   field pinned to zero on the boundary; the heat part is applied exactly
//!   through the spectral basis, the moment-map nonlinearity explicitly,
//! - [`picard_solve`]: the short-time contraction construction
//!   `x₂ ← L⁻¹ Q(M x₀ + x₂)` on a window `[0, t₀]`, which is also the
//!   existence proof's algorithm; non-contraction signals the caller to
//!   halve `t₀`.
//!
//! [`run_flow`] drives any of them until `‖f‖_{L²}` drops below tolerance,
//! recording diagnostics and halving `dt` (at most 20 times) whenever a step
//! fails to decrease the functional.

use crate::fields::{dx_scalar, dy_scalar, State};
use crate::moment::{diagnostics_with_f, flow_gradient, moment_density, Diagnostics};
use crate::newton::{contraction_solve, ContractionProblem, SolveStatus};
use crate::spectral::{build_basis, phi1, BoundaryKind, SpectralBasis};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("euler stepping requires torus topology")]
    EulerNeedsTorus,
    #[error("numerical failure at t = {t}: {reason}")]
    Numerical { t: f64, reason: String },
    #[error("Dirichlet condition violated at entry: max boundary |F| = {0}")]
    DirichletViolated(f64),
    #[error("picard iteration failed to contract even after {halvings} window halvings")]
    NoContraction { halvings: usize },
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error("xi exceeded the configured cap {cap}")]
    XiCapExceeded { cap: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Imex,
    Picard,
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub integrator: Integrator,
    pub dt: f64,
    pub t_end: f64,
    pub output_every: usize,
    pub tolerance: f64,
    pub max_picard_iters: usize,
    /// Picard window length, halved on non-contraction.
    pub t0_window: f64,
    /// Guard on ‖ξ‖_C⁰ (the injectivity-radius check; ℂ has none, so the
    /// default is infinite).
    pub xi_cap: f64,
}

impl FlowConfig {
    pub fn new(integrator: Integrator, dt: f64, t_end: f64, tolerance: f64) -> Self {
        Self {
            integrator,
            dt,
            t_end,
            output_every: 1,
            tolerance,
            max_picard_iters: 40,
            t0_window: 0.05,
            xi_cap: f64::INFINITY,
        }
    }
}

/// The unknowns of the augmented system relative to a base state:
/// `A = A₀ + a`, `u = u₀ + ξ`, and the independent scalar `F`.
#[derive(Clone, Debug)]
pub struct Triple {
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub f: Vec<f64>,
    pub xi: Vec<Complex64>,
}

impl Triple {
    /// Initial data `(0, *F_{A₀,u₀}, 0)`.
    pub fn initial(base: &State) -> Self {
        let n = base.grid.node_count;
        Triple {
            ax: vec![0.0; n],
            ay: vec![0.0; n],
            f: moment_density(base),
            xi: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn reconstruct(&self, base: &State) -> State {
        let mut st = base.clone();
        for k in 0..base.grid.node_count {
            st.a.ax[k] += self.ax[k];
            st.a.ay[k] += self.ay[k];
            st.u.values[k] += self.xi[k];
        }
        st
    }

    /// Sup-norm distance between the independent `F` and the moment density
    /// of the reconstructed state, over interior nodes. On the boundary `F`
    /// carries the Dirichlet datum of the flow system, so a mismatch there
    /// measures incompatibility of the initial data rather than a
    /// consistency defect of the scheme.
    pub fn consistency_defect(&self, base: &State) -> f64 {
        let st = self.reconstruct(base);
        let md = moment_density(&st);
        let mut worst = 0.0f64;
        for k in 0..base.grid.node_count {
            if !base.grid.boundary_mask[k] {
                worst = worst.max((self.f[k] - md[k]).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    ReachedTEnd,
    /// Zero gradient at a nonzero critical value (higher stratum).
    Stationary,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    #[serde(flatten)]
    pub diag: Diagnostics,
}

#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub rows: Vec<TraceRow>,
    pub final_state: State,
    pub status: FlowStatus,
    pub dt_final: f64,
    pub halvings: usize,
    /// Max of `sup|F − moment_density|` over accepted IMEX/Picard steps.
    pub max_triple_defect: f64,
}

fn check_finite(state: &State, t: f64) -> Result<(), FlowError> {
    if state.has_nan() {
        Err(FlowError::Numerical { t, reason: "NaN in state".into() })
    } else {
        Ok(())
    }
}

/// One explicit step `(A, u) += dt·(*df, f·u)` of the direct flow.
pub fn euler_step(state: &State, dt: f64) -> Result<State, FlowError> {
    if !state.grid.is_torus() {
        return Err(FlowError::EulerNeedsTorus);
    }
    let (adx, ady, udot) = flow_gradient(state);
    let mut next = state.clone();
    for k in 0..state.grid.node_count {
        next.a.ax[k] += dt * adx[k];
        next.a.ay[k] += dt * ady[k];
        next.u.values[k] += udot[k] * dt;
    }
    check_finite(&next, dt)?;
    Ok(next)
}

fn star_d(grid: &std::sync::Arc<crate::grid::Grid>, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let fx = dx_scalar(grid, f);
    let fy = dy_scalar(grid, f);
    (fy.iter().map(|v| -v).collect(), fx)
}

fn max_boundary_abs(grid: &crate::grid::Grid, f: &[f64]) -> f64 {
    grid.boundary_mask
        .iter()
        .zip(f.iter())
        .filter(|(b, _)| **b)
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
}

/// One first-order IMEX step of the `(a, F, ξ)` system: the heat part of the
/// `F` equation is integrated exactly mode by mode, the nonlinearity
/// `−|u₀+ξ|²F` enters through the `φ₁` exponential-integrator weight, and
/// `a`, `ξ` are advanced explicitly. Boundary values of `F` stay zero.
pub fn imex_step(
    triple: &Triple,
    base: &State,
    dt: f64,
    basis: &SpectralBasis,
) -> Result<Triple, FlowError> {
    let grid = &base.grid;
    let n = grid.node_count;
    if !grid.is_torus() {
        let viol = max_boundary_abs(grid, &triple.f);
        if viol > 1e-12 {
            return Err(FlowError::DirichletViolated(viol));
        }
    }

    // explicit nonlinearity at the current sample
    let mut nonlin = vec![0.0; n];
    for k in 0..n {
        let u = base.u.values[k] + triple.xi[k];
        nonlin[k] = -u.norm_sqr() * triple.f[k];
    }

    let mut fm = basis.to_modes(&triple.f)?;
    let nm = basis.to_modes(&nonlin)?;
    for q in 0..fm.ncols() {
        for p in 0..fm.nrows() {
            let z = -basis.lambda_pq(p, q) * dt;
            fm[(p, q)] = z.exp() * fm[(p, q)] + dt * phi1(z) * nm[(p, q)];
        }
    }
    let f_new = basis.from_modes(&fm);

    // a and ξ advance explicitly; the a update uses the midpoint of F
    let f_mid: Vec<f64> = triple
        .f
        .iter()
        .zip(f_new.iter())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let (sdx, sdy) = star_d(grid, &f_mid);
    let mut next = triple.clone();
    next.f = f_new;
    for k in 0..n {
        next.ax[k] += dt * sdx[k];
        next.ay[k] += dt * sdy[k];
        let u = base.u.values[k] + triple.xi[k];
        next.xi[k] += u * (dt * triple.f[k]);
    }
    let finite = next.f.iter().all(|v| v.is_finite())
        && next.ax.iter().all(|v| v.is_finite())
        && next.xi.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    if !finite {
        return Err(FlowError::Numerical { t: dt, reason: "NaN in IMEX step".into() });
    }
    Ok(next)
}

/// A solved Picard window: the trajectory at `m_steps + 1` uniform samples
/// of `[0, t₀]` plus the contraction diagnostics.
pub struct PicardWindow {
    pub trajectory: Vec<Triple>,
    pub dt: f64,
    pub iterations: usize,
    pub contraction_ratios: Vec<f64>,
}

#[derive(Clone, Copy)]
struct TrajectoryCodec {
    n: usize,
    samples: usize,
}

impl TrajectoryCodec {
    fn len(&self) -> usize {
        self.samples * 5 * self.n
    }

    fn flatten(&self, traj: &[Triple]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for t in traj {
            out.extend_from_slice(&t.ax);
            out.extend_from_slice(&t.ay);
            out.extend_from_slice(&t.f);
            for z in &t.xi {
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }

    fn unflatten(&self, flat: &[f64]) -> Vec<Triple> {
        let n = self.n;
        let mut out = Vec::with_capacity(self.samples);
        for s in 0..self.samples {
            let base = s * 5 * n;
            let ax = flat[base..base + n].to_vec();
            let ay = flat[base + n..base + 2 * n].to_vec();
            let f = flat[base + 2 * n..base + 3 * n].to_vec();
            let mut xi = Vec::with_capacity(n);
            for k in 0..n {
                xi.push(Complex64::new(flat[base + 3 * n + 2 * k], flat[base + 3 * n + 2 * k + 1]));
            }
            out.push(Triple { ax, ay, f, xi });
        }
        out
    }
}

fn cumulative_trapezoid(samples: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    let n = samples[0].len();
    let mut acc = vec![0.0; n];
    out.push(acc.clone());
    for s in 1..samples.len() {
        for k in 0..n {
            acc[k] += 0.5 * dt * (samples[s - 1][k] + samples[s][k]);
        }
        out.push(acc.clone());
    }
    out
}

/// `x₁ = M x₀`: heat evolution of `F₀` with `a` integrated from `*dF₁` and
/// `ξ` held constant.
fn apply_m(base: &State, basis: &SpectralBasis, dt: f64, samples: usize) -> Result<Vec<Triple>, FlowError> {
    let n = base.grid.node_count;
    let f0 = moment_density(base);
    let mut f_traj = Vec::with_capacity(samples);
    for s in 0..samples {
        f_traj.push(basis.heat_evolve(&f0, s as f64 * dt)?);
    }
    let stard: Vec<(Vec<f64>, Vec<f64>)> =
        f_traj.iter().map(|f| star_d(&base.grid, f)).collect();
    let ax_int = cumulative_trapezoid(&stard.iter().map(|s| s.0.clone()).collect::<Vec<_>>(), dt);
    let ay_int = cumulative_trapezoid(&stard.iter().map(|s| s.1.clone()).collect::<Vec<_>>(), dt);
    Ok((0..samples)
        .map(|s| Triple {
            ax: ax_int[s].clone(),
            ay: ay_int[s].clone(),
            f: f_traj[s].clone(),
            xi: vec![Complex64::new(0.0, 0.0); n],
        })
        .collect())
}

/// The nonlinearity `Q` of the abelian system, sample by sample:
/// `Q_a = 0`, `Q_F = −|u₀+ξ|²F`, `Q_ξ = F·(u₀+ξ)`.
fn apply_q(base: &State, traj: &[Triple]) -> Vec<Triple> {
    let n = base.grid.node_count;
    traj.iter()
        .map(|t| {
            let mut qf = vec![0.0; n];
            let mut qxi = vec![Complex64::new(0.0, 0.0); n];
            for k in 0..n {
                let u = base.u.values[k] + t.xi[k];
                qf[k] = -u.norm_sqr() * t.f[k];
                qxi[k] = u * t.f[k];
            }
            Triple { ax: vec![0.0; n], ay: vec![0.0; n], f: qf, xi: qxi }
        })
        .collect()
}

/// `L⁻¹` on a zero-initial-condition trajectory: Duhamel for `F`, time
/// integration (plus the `*dF` coupling) for `a`, time integration for `ξ`.
fn apply_l_inverse(
    base: &State,
    basis: &SpectralBasis,
    dt: f64,
    w: &[Triple],
) -> Result<Vec<Triple>, FlowError> {
    let samples = w.len();
    let f_forcing: Vec<Vec<f64>> = w.iter().map(|t| t.f.clone()).collect();
    let f_traj = basis.duhamel(&f_forcing, dt)?;
    let mut ax_rate = Vec::with_capacity(samples);
    let mut ay_rate = Vec::with_capacity(samples);
    for s in 0..samples {
        let (sdx, sdy) = star_d(&base.grid, &f_traj[s]);
        ax_rate.push(
            sdx.iter().zip(w[s].ax.iter()).map(|(a, b)| a + b).collect::<Vec<f64>>(),
        );
        ay_rate.push(
            sdy.iter().zip(w[s].ay.iter()).map(|(a, b)| a + b).collect::<Vec<f64>>(),
        );
    }
    let ax_int = cumulative_trapezoid(&ax_rate, dt);
    let ay_int = cumulative_trapezoid(&ay_rate, dt);
    let xi_re: Vec<Vec<f64>> =
        w.iter().map(|t| t.xi.iter().map(|z| z.re).collect()).collect();
    let xi_im: Vec<Vec<f64>> =
        w.iter().map(|t| t.xi.iter().map(|z| z.im).collect()).collect();
    let xi_re_int = cumulative_trapezoid(&xi_re, dt);
    let xi_im_int = cumulative_trapezoid(&xi_im, dt);
    Ok((0..samples)
        .map(|s| Triple {
            ax: ax_int[s].clone(),
            ay: ay_int[s].clone(),
            f: f_traj[s].clone(),
            xi: (0..base.grid.node_count)
                .map(|k| Complex64::new(xi_re_int[s][k], xi_im_int[s][k]))
                .collect(),
        })
        .collect())
}

fn add_trajectories(a: &[Triple], b: &[Triple]) -> Vec<Triple> {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| Triple {
            ax: x.ax.iter().zip(y.ax.iter()).map(|(p, q)| p + q).collect(),
            ay: x.ay.iter().zip(y.ay.iter()).map(|(p, q)| p + q).collect(),
            f: x.f.iter().zip(y.f.iter()).map(|(p, q)| p + q).collect(),
            xi: x.xi.iter().zip(y.xi.iter()).map(|(p, q)| p + q).collect(),
        })
        .collect()
}

/// Solve the augmented system on `[0, t₀]` by the contraction iteration
/// `x₂ ← L⁻¹ Q(M x₀ + x₂)`, starting from `x₂ = 0`.
///
/// A `LeftBall` outcome or a failed entry check means the window does not
/// contract; the caller halves `t₀` and retries.
pub fn picard_solve(
    base: &State,
    basis: &SpectralBasis,
    t0_window: f64,
    m_steps: usize,
    tol: f64,
    max_iters: usize,
) -> Result<PicardWindow, FlowError> {
    assert!(m_steps >= 1);
    let dt = t0_window / m_steps as f64;
    let samples = m_steps + 1;
    let n = base.grid.node_count;
    let x1 = apply_m(base, basis, dt, samples)?;
    let codec = TrajectoryCodec { n, samples };

    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let f0_scale = sup(&codec.flatten(&x1));
    let delta = 8.0 * (1.0 + f0_scale);

    let x1_ref = &x1;
    let failed: std::cell::Cell<bool> = std::cell::Cell::new(false);
    let failed_ref = &failed;
    let problem = ContractionProblem {
        apply_f1_inverse: Box::new(|y: &[f64]| y.to_vec()),
        apply_f2: Box::new(move |x2_flat: &[f64]| {
            let x2 = codec.unflatten(x2_flat);
            let total = add_trajectories(x1_ref, &x2);
            let q = apply_q(base, &total);
            match apply_l_inverse(base, basis, dt, &q) {
                Ok(li) => {
                    let mut out = codec.flatten(&li);
                    for v in out.iter_mut() {
                        *v = -*v;
                    }
                    out
                }
                Err(_) => {
                    failed_ref.set(true);
                    vec![0.0; codec.len()]
                }
            }
        }),
        delta,
        c: 1.0,
        max_iters,
        tol,
        norm: Box::new(move |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()))),
        lipschitz_f2: None,
    };
    let target = vec![0.0; codec.len()];
    let report = contraction_solve(&problem, &target).map_err(|e| FlowError::Numerical {
        t: 0.0,
        reason: format!("picard entry check: {e}"),
    })?;
    if failed.get() {
        return Err(FlowError::Numerical { t: 0.0, reason: "spectral failure in picard".into() });
    }
    match report.status {
        SolveStatus::Converged => {
            let x2 = codec.unflatten(&report.solution);
            let traj = add_trajectories(&x1, &x2);
            Ok(PicardWindow {
                trajectory: traj,
                dt,
                iterations: report.iterations,
                contraction_ratios: report.contraction_ratios,
            })
        }
        SolveStatus::LeftBall | SolveStatus::MaxIters => Err(FlowError::NoContraction { halvings: 0 }),
    }
}

enum Stepper<'a> {
    Euler,
    Imex { basis: &'a SpectralBasis, triple: Triple, base: State },
}

/// Drive the configured integrator until `t_end` or `‖f‖_{L²} < tolerance`,
/// recording diagnostics every `output_every` accepted steps.
pub fn run_flow(state: &State, config: &FlowConfig) -> Result<FlowTrace, FlowError> {
    match config.integrator {
        Integrator::Picard => run_flow_picard(state, config),
        _ => run_flow_stepping(state, config),
    }
}

fn flow_basis(state: &State) -> Result<SpectralBasis, FlowError> {
    let kind = if state.grid.is_torus() {
        BoundaryKind::Periodic
    } else {
        BoundaryKind::Dirichlet
    };
    Ok(build_basis(state.grid.clone(), kind)?)
}

fn gradient_norm(state: &State) -> f64 {
    let (ax, ay, udot) = flow_gradient(state);
    let g = &state.grid;
    (g.l2_norm_one_form(&ax, &ay).powi(2) + g.l2_norm_complex(&udot).powi(2)).sqrt()
}

/// Hard cap on accepted steps per run; reached only if dt collapses.
const MAX_STEPS: usize = 5_000_000;

fn run_flow_stepping(state: &State, config: &FlowConfig) -> Result<FlowTrace, FlowError> {
    if config.integrator == Integrator::Euler && !state.grid.is_torus() {
        return Err(FlowError::EulerNeedsTorus);
    }
    let basis_storage;
    let mut stepper = match config.integrator {
        Integrator::Euler => Stepper::Euler,
        Integrator::Imex => {
            basis_storage = flow_basis(state)?;
            let mut triple = Triple::initial(state);
            if !state.grid.is_torus() {
                // impose the Dirichlet datum on the independent variable
                for k in 0..state.grid.node_count {
                    if state.grid.boundary_mask[k] {
                        triple.f[k] = 0.0;
                    }
                }
            }
            Stepper::Imex { basis: &basis_storage, triple, base: state.clone() }
        }
        Integrator::Picard => unreachable!(),
    };

    let mut dt = config.dt;
    if config.integrator == Integrator::Euler {
        let cap = state.grid.h * state.grid.h / 8.0;
        if dt > cap {
            dt = cap;
        }
    }

    // the flow's own moment scalar: the composite density for direct
    // stepping, the independent F (with its Dirichlet datum) for IMEX
    let flow_f = |st: &State, stepper: &Stepper<'_>| -> Vec<f64> {
        match stepper {
            Stepper::Euler => moment_density(st),
            Stepper::Imex { triple, .. } => triple.f.clone(),
        }
    };

    let mut rows = Vec::new();
    let mut current = state.clone();
    let mut t = 0.0;
    let mut step = 0usize;
    let mut halvings = 0usize;
    let mut max_defect = 0.0f64;
    let f0 = flow_f(&current, &stepper);
    let mut func_prev = {
        let n = current.grid.l2_norm_scalar(&f0);
        0.5 * n * n
    };
    rows.push(TraceRow { step: 0, t: 0.0, diag: diagnostics_with_f(&current, &f0) });

    if current.grid.l2_norm_scalar(&f0) < config.tolerance {
        return Ok(FlowTrace {
            rows,
            final_state: current,
            status: FlowStatus::Converged,
            dt_final: dt,
            halvings,
            max_triple_defect: 0.0,
        });
    }
    if gradient_norm(&current) < 1e-13 {
        return Ok(FlowTrace {
            rows,
            final_state: current,
            status: FlowStatus::Stationary,
            dt_final: dt,
            halvings,
            max_triple_defect: 0.0,
        });
    }

    let mut status = FlowStatus::ReachedTEnd;
    while t < config.t_end - 1e-14 {
        if step >= MAX_STEPS {
            return Err(FlowError::Numerical {
                t,
                reason: format!("step budget exhausted at dt = {dt}"),
            });
        }
        let step_dt = dt.min(config.t_end - t);
        let (candidate_state, candidate_triple): (State, Option<Triple>) = match &stepper {
            Stepper::Euler => (euler_step(&current, step_dt)?, None),
            Stepper::Imex { basis, triple, base } => {
                let next = imex_step(triple, base, step_dt, basis)?;
                (next.reconstruct(base), Some(next))
            }
        };
        let f_new = match (&candidate_triple, &stepper) {
            (Some(tri), _) => tri.f.clone(),
            (None, _) => moment_density(&candidate_state),
        };
        let func_new = {
            let n = candidate_state.grid.l2_norm_scalar(&f_new);
            0.5 * n * n
        };
        let slack = 1e-10 * (1.0 + func_prev.abs());
        if func_new > func_prev + slack {
            halvings += 1;
            if halvings > 20 {
                return Err(FlowError::Numerical {
                    t,
                    reason: format!(
                        "functional increased ({func_prev} -> {func_new}) after 20 dt halvings"
                    ),
                });
            }
            dt *= 0.5;
            continue;
        }
        if let Stepper::Imex { triple, base, .. } = &mut stepper {
            let next = candidate_triple.expect("imex produced a triple");
            let xi_sup = next.xi.iter().fold(0.0f64, |m, z| m.max(z.norm()));
            if xi_sup > config.xi_cap {
                return Err(FlowError::XiCapExceeded { cap: config.xi_cap });
            }
            max_defect = max_defect.max(next.consistency_defect(base));
            *triple = next;
        }
        current = candidate_state;
        func_prev = func_new;
        t += step_dt;
        step += 1;
        if step % config.output_every == 0 {
            rows.push(TraceRow { step, t, diag: diagnostics_with_f(&current, &f_new) });
        }
        if current.grid.l2_norm_scalar(&f_new) < config.tolerance {
            status = FlowStatus::Converged;
            break;
        }
    }
    if rows.last().map(|r| r.step) != Some(step) {
        let f = flow_f(&current, &stepper);
        rows.push(TraceRow { step, t, diag: diagnostics_with_f(&current, &f) });
    }
    Ok(FlowTrace {
        rows,
        final_state: current,
        status,
        dt_final: dt,
        halvings,
        max_triple_defect: max_defect,
    })
}

fn clamp_boundary(grid: &crate::grid::Grid, f: &mut [f64]) {
    for k in 0..grid.node_count {
        if grid.boundary_mask[k] {
            f[k] = 0.0;
        }
    }
}

fn run_flow_picard(state: &State, config: &FlowConfig) -> Result<FlowTrace, FlowError> {
    let basis = flow_basis(state)?;
    let mut rows = Vec::new();
    let mut current = state.clone();
    let mut t = 0.0;
    let mut step = 0usize;
    let mut t0 = config.t0_window;
    let mut halvings = 0usize;
    let mut max_defect = 0.0f64;
    let mut f_current = moment_density(&current);
    clamp_boundary(&current.grid, &mut f_current);
    rows.push(TraceRow { step: 0, t: 0.0, diag: diagnostics_with_f(&current, &f_current) });

    if current.grid.l2_norm_scalar(&f_current) < config.tolerance {
        return Ok(FlowTrace {
            rows,
            final_state: current,
            status: FlowStatus::Converged,
            dt_final: t0,
            halvings,
            max_triple_defect: 0.0,
        });
    }

    let mut status = FlowStatus::ReachedTEnd;
    'windows: while t < config.t_end - 1e-14 {
        let window = t0.min(config.t_end - t);
        let m_steps = ((window / config.dt).ceil() as usize).max(1);
        match picard_solve(&current, &basis, window, m_steps, config.tolerance * 1e-3, config.max_picard_iters)
        {
            Ok(win) => {
                for (s, tri) in win.trajectory.iter().enumerate().skip(1) {
                    let st = tri.reconstruct(&current);
                    max_defect = max_defect.max(tri.consistency_defect(&current));
                    step += 1;
                    if step % config.output_every == 0 || s == win.trajectory.len() - 1 {
                        rows.push(TraceRow {
                            step,
                            t: t + s as f64 * win.dt,
                            diag: diagnostics_with_f(&st, &tri.f),
                        });
                    }
                }
                let last = win.trajectory.last().expect("window has samples");
                current = last.reconstruct(&current);
                check_finite(&current, t)?;
                t += window;
                if current.grid.l2_norm_scalar(&last.f) < config.tolerance {
                    status = FlowStatus::Converged;
                    break 'windows;
                }
            }
            Err(FlowError::NoContraction { .. }) => {
                halvings += 1;
                if halvings > 20 {
                    return Err(FlowError::NoContraction { halvings });
                }
                t0 *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FlowTrace {
        rows,
        final_state: current,
        status,
        dt_final: t0,
        halvings,
        max_triple_defect: max_defect,
    })
}
