//! Connections, sections, gauge actions and the discrete differential /
//! covariant operators, specialized to structure group U(1) acting linearly
//! on ℂ.
//!
//! Conventions, all pinned by tests rather than trusted:
//!
//! - covariant derivative `D_k u = ∂ᶜ_k u + i a_k u`,
//! - `∂̄_A u = ½(D_x u + i D_y u)`,
//! - unitary gauge `u ↦ e^{iθ}u, a ↦ a − dθ`,
//! - complex gauge `u ↦ e^{σ+iθ}u, a ↦ a − dθ + *dσ`, the unique pairing
//!   under which `∂̄_{g(A)}(g·u) = e^{σ+iθ} ∂̄_A u` in the continuum,
//! - positive Laplacian `Δ = −(∂²_x + ∂²_y)`.
//!
//! First derivatives are central differences in the interior, one-sided
//! second-order stencils on rectangle boundaries, periodic wrap on the
//! torus. Degree-d torus bundles store a constant-curvature background with
//! flux `2πd` analytically; the stored `(ax, ay)` is the periodic part, and
//! sections pick up the multiplier phase `e^{−2πid·y/ly}` when a stencil
//! crosses the x-seam.

use crate::grid::{Grid, Topology};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldsError {
    #[error("field length {got} does not match node count {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite entry in field data")]
    NonFinite,
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("nontrivial bundle degree {0} requires torus topology")]
    DegreeNeedsTorus(i32),
}

/// Real-valued 1-form `(a_x, a_y)` on grid nodes, plus the bundle degree.
#[derive(Clone, Debug)]
pub struct Connection {
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    /// Degree of the underlying bundle; the constant-curvature background
    /// carrying flux `2π·degree` is handled analytically.
    pub degree: i32,
}

impl Connection {
    pub fn zero(grid: &Grid) -> Self {
        Self { ax: vec![0.0; grid.node_count], ay: vec![0.0; grid.node_count], degree: 0 }
    }
}

/// Complex scalar field on grid nodes.
#[derive(Clone, Debug)]
pub struct Section {
    pub values: Vec<Complex64>,
}

impl Section {
    pub fn constant(grid: &Grid, value: Complex64) -> Self {
        Self { values: vec![value; grid.node_count] }
    }
}

/// A point of the configuration space: grid, connection, section and the
/// moment-map level τ entering `Φ(u) = ½(τ − |u|²)`.
#[derive(Clone, Debug)]
pub struct State {
    pub grid: Arc<Grid>,
    pub a: Connection,
    pub u: Section,
    pub tau: f64,
}

impl State {
    pub fn new(grid: Arc<Grid>, a: Connection, u: Section, tau: f64) -> Result<Self, FieldsError> {
        let n = grid.node_count;
        for len in [a.ax.len(), a.ay.len(), u.values.len()] {
            if len != n {
                return Err(FieldsError::LengthMismatch { got: len, want: n });
            }
        }
        if !(tau > 0.0) {
            return Err(FieldsError::BadTau(tau));
        }
        if a.degree != 0 && grid.spec.topology != Topology::Torus {
            return Err(FieldsError::DegreeNeedsTorus(a.degree));
        }
        let finite = a.ax.iter().chain(a.ay.iter()).all(|v| v.is_finite())
            && u.values.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite {
            return Err(FieldsError::NonFinite);
        }
        Ok(Self { grid, a, u, tau })
    }

    /// Flux density `2π·degree / (lx·ly)` of the background connection.
    pub fn background_curvature(&self) -> f64 {
        if self.a.degree == 0 {
            0.0
        } else {
            2.0 * PI * self.a.degree as f64 / (self.grid.spec.lx * self.grid.spec.ly)
        }
    }

    pub fn has_nan(&self) -> bool {
        self.a.ax.iter().any(|v| !v.is_finite())
            || self.a.ay.iter().any(|v| !v.is_finite())
            || self.u.values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
    }
}

/// Per-node real function of the gauge group, `g = e^{iθ}`.
#[derive(Clone, Debug)]
pub struct UnitaryGauge {
    pub theta: Vec<f64>,
}

/// Per-node complexified gauge data, `g = e^{σ + iθ}`.
#[derive(Clone, Debug)]
pub struct ComplexGauge {
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
}

// ── scalar stencils ─────────────────────────────────────────────────

macro_rules! first_derivative {
    ($name:ident, $t:ty, $zero:expr) => {
        pub(crate) fn $name(grid: &Grid, f: &[$t], axis: usize) -> Vec<$t> {
            assert_eq!(f.len(), grid.node_count);
            let (nc, nr) = (grid.ncols, grid.nrows);
            let inv2h = 1.0 / (2.0 * grid.h);
            let mut out = vec![$zero; grid.node_count];
            let torus = grid.is_torus();
            for j in 0..nr {
                for i in 0..nc {
                    let k = grid.idx(i, j);
                    let (p, n) = if axis == 0 { (i, nc) } else { (j, nr) };
                    let at = |q: usize| if axis == 0 { grid.idx(q, j) } else { grid.idx(i, q) };
                    out[k] = if torus {
                        let fp = f[at((p + 1) % n)];
                        let fm = f[at((p + n - 1) % n)];
                        (fp - fm) * inv2h
                    } else if p == 0 {
                        (f[at(0)] * -3.0 + f[at(1)] * 4.0 - f[at(2)]) * inv2h
                    } else if p == n - 1 {
                        (f[at(n - 1)] * 3.0 - f[at(n - 2)] * 4.0 + f[at(n - 3)]) * inv2h
                    } else {
                        (f[at(p + 1)] - f[at(p - 1)]) * inv2h
                    };
                }
            }
            out
        }
    };
}

first_derivative!(deriv_scalar, f64, 0.0);
first_derivative!(deriv_complex, Complex64, Complex64::new(0.0, 0.0));

pub(crate) fn dx_scalar(grid: &Grid, f: &[f64]) -> Vec<f64> {
    deriv_scalar(grid, f, 0)
}

pub(crate) fn dy_scalar(grid: &Grid, f: &[f64]) -> Vec<f64> {
    deriv_scalar(grid, f, 1)
}

/// Positive five-point Laplacian `−(∂²_x + ∂²_y)`; one-sided second-order
/// second differences on rectangle boundary nodes.
pub fn laplacian5(grid: &Grid, f: &[f64]) -> Vec<f64> {
    assert_eq!(f.len(), grid.node_count);
    let (nc, nr) = (grid.ncols, grid.nrows);
    let invh2 = 1.0 / (grid.h * grid.h);
    let torus = grid.is_torus();
    let second = |vals: &dyn Fn(usize) -> f64, p: usize, n: usize| -> f64 {
        if torus {
            vals((p + 1) % n) - 2.0 * vals(p) + vals((p + n - 1) % n)
        } else if p == 0 {
            2.0 * vals(0) - 5.0 * vals(1) + 4.0 * vals(2) - vals(3)
        } else if p == n - 1 {
            2.0 * vals(n - 1) - 5.0 * vals(n - 2) + 4.0 * vals(n - 3) - vals(n - 4)
        } else {
            vals(p + 1) - 2.0 * vals(p) + vals(p - 1)
        }
    };
    let mut out = vec![0.0; grid.node_count];
    for j in 0..nr {
        for i in 0..nc {
            let along_x = |q: usize| f[grid.idx(q, j)];
            let along_y = |q: usize| f[grid.idx(i, q)];
            out[grid.idx(i, j)] =
                -(second(&along_x, i, nc) + second(&along_y, j, nr)) * invh2;
        }
    }
    out
}

/// Composite positive Laplacian `d*d = −(D_x D_x + D_y D_y)` built from the
/// first-derivative stencils. This is the operator actually produced by the
/// complex-gauge action on the curvature, so it is the one appearing in the
/// scalar vortex equation.
pub fn wide_laplacian(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let fx = dx_scalar(grid, f);
    let fy = dy_scalar(grid, f);
    let fxx = dx_scalar(grid, &fx);
    let fyy = dy_scalar(grid, &fy);
    fxx.iter().zip(fyy.iter()).map(|(a, b)| -(a + b)).collect()
}

/// Codifferential of a 1-form: `d*(b) = −(∂_x b_x + ∂_y b_y)`.
pub fn codifferential(grid: &Grid, bx: &[f64], by: &[f64]) -> Vec<f64> {
    let dbx = dx_scalar(grid, bx);
    let dby = dy_scalar(grid, by);
    dbx.iter().zip(dby.iter()).map(|(a, b)| -(a + b)).collect()
}

// ── geometric operators ─────────────────────────────────────────────

/// `*F_A = ∂ᶜ_x a_y − ∂ᶜ_y a_x`, plus the constant background on degree-d tori.
pub fn curvature(state: &State) -> Vec<f64> {
    let g = &state.grid;
    let day = dx_scalar(g, &state.a.ay);
    let dax = dy_scalar(g, &state.a.ax);
    let bg = state.background_curvature();
    day.iter().zip(dax.iter()).map(|(a, b)| a - b + bg).collect()
}

/// Multiplier phase picked up by a section crossing the x-seam upward at row j.
fn seam_phase(state: &State, j: usize) -> Complex64 {
    let y = j as f64 * state.grid.h;
    let arg = -2.0 * PI * state.a.degree as f64 * y / state.grid.spec.ly;
    Complex64::from_polar(1.0, arg)
}

/// Twisted derivative `(D_x u, D_y u)` with `D_k u = ∂ᶜ_k u + i a_k u`.
pub fn covariant_derivative(state: &State) -> (Vec<Complex64>, Vec<Complex64>) {
    let g = &state.grid;
    let u = &state.u.values;
    let n = g.node_count;
    let (nc, nr) = (g.ncols, g.nrows);
    let inv2h = 1.0 / (2.0 * g.h);
    let torus = g.is_torus();
    let bg = state.background_curvature();
    let i_unit = Complex64::i();
    let mut dx = vec![Complex64::new(0.0, 0.0); n];
    let mut dy = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..nr {
        let m = seam_phase(state, j);
        for i in 0..nc {
            let k = g.idx(i, j);
            // x direction, with seam multiplier on the torus
            let ddx = if torus {
                let up = if i + 1 == nc { m * u[g.idx(0, j)] } else { u[g.idx(i + 1, j)] };
                let dn = if i == 0 { m.conj() * u[g.idx(nc - 1, j)] } else { u[g.idx(i - 1, j)] };
                (up - dn) * inv2h
            } else if i == 0 {
                (u[g.idx(0, j)] * -3.0 + u[g.idx(1, j)] * 4.0 - u[g.idx(2, j)]) * inv2h
            } else if i == nc - 1 {
                (u[g.idx(nc - 1, j)] * 3.0 - u[g.idx(nc - 2, j)] * 4.0 + u[g.idx(nc - 3, j)]) * inv2h
            } else {
                (u[g.idx(i + 1, j)] - u[g.idx(i - 1, j)]) * inv2h
            };
            // y direction; the background is periodic in y, no multiplier
            let ddy = if torus {
                (u[g.idx(i, (j + 1) % nr)] - u[g.idx(i, (j + nr - 1) % nr)]) * inv2h
            } else if j == 0 {
                (u[g.idx(i, 0)] * -3.0 + u[g.idx(i, 1)] * 4.0 - u[g.idx(i, 2)]) * inv2h
            } else if j == nr - 1 {
                (u[g.idx(i, nr - 1)] * 3.0 - u[g.idx(i, nr - 2)] * 4.0 + u[g.idx(i, nr - 3)]) * inv2h
            } else {
                (u[g.idx(i, j + 1)] - u[g.idx(i, j - 1)]) * inv2h
            };
            let x = i as f64 * g.h;
            dx[k] = ddx + i_unit * state.a.ax[k] * u[k];
            dy[k] = ddy + i_unit * (state.a.ay[k] + bg * x) * u[k];
        }
    }
    (dx, dy)
}

/// `∂̄_A u = ½(D_x u + i D_y u)` as a per-node complex value.
pub fn dbar(state: &State) -> Vec<Complex64> {
    let (dx, dy) = covariant_derivative(state);
    dx.iter()
        .zip(dy.iter())
        .map(|(a, b)| 0.5 * (a + Complex64::i() * b))
        .collect()
}

pub fn apply_unitary_gauge(state: &State, gauge: &UnitaryGauge) -> State {
    assert_eq!(gauge.theta.len(), state.grid.node_count);
    let g = &state.grid;
    let tx = dx_scalar(g, &gauge.theta);
    let ty = dy_scalar(g, &gauge.theta);
    let ax = state.a.ax.iter().zip(tx.iter()).map(|(a, t)| a - t).collect();
    let ay = state.a.ay.iter().zip(ty.iter()).map(|(a, t)| a - t).collect();
    let values = state
        .u
        .values
        .iter()
        .zip(gauge.theta.iter())
        .map(|(u, t)| Complex64::from_polar(1.0, *t) * u)
        .collect();
    State {
        grid: state.grid.clone(),
        a: Connection { ax, ay, degree: state.a.degree },
        u: Section { values },
        tau: state.tau,
    }
}

pub fn apply_complex_gauge(state: &State, gauge: &ComplexGauge) -> State {
    assert_eq!(gauge.sigma.len(), state.grid.node_count);
    assert_eq!(gauge.theta.len(), state.grid.node_count);
    let g = &state.grid;
    let tx = dx_scalar(g, &gauge.theta);
    let ty = dy_scalar(g, &gauge.theta);
    let sx = dx_scalar(g, &gauge.sigma);
    let sy = dy_scalar(g, &gauge.sigma);
    // a ↦ a − dθ + *dσ with *dσ = (−∂_yσ, ∂_xσ)
    let ax: Vec<f64> = (0..g.node_count)
        .map(|k| state.a.ax[k] - tx[k] - sy[k])
        .collect();
    let ay: Vec<f64> = (0..g.node_count)
        .map(|k| state.a.ay[k] - ty[k] + sx[k])
        .collect();
    let values = (0..g.node_count)
        .map(|k| {
            Complex64::from_polar(gauge.sigma[k].exp(), gauge.theta[k]) * state.u.values[k]
        })
        .collect();
    State {
        grid: state.grid.clone(),
        a: Connection { ax, ay, degree: state.a.degree },
        u: Section { values },
        tau: state.tau,
    }
}
