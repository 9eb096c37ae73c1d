//! Eigenbasis of the flat five-point Laplacian and the two heat-equation
//! solution operators built on it: the homogeneous semigroup `e^{−Δt}` and
//! the zero-initial-condition Duhamel convolution.
//!
//! Modes are analytic sine (Dirichlet) or Fourier (periodic) tensor
//! products, so transforms factor along the axes and every solver acts by
//! modal multiplication. A dense eigensolve of the assembled stencil is
//! kept in the tests as an independent check of the analytic eigenvalues.

use crate::grid::{Grid, Topology};
use nalgebra::DMatrix;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("boundary kind {kind:?} incompatible with topology {topology:?}")]
    TopologyMismatch { kind: BoundaryKind, topology: Topology },
    #[error("negative evolution time {0}")]
    NegativeTime(f64),
    #[error("zero eigenvalue with shift 0 and non-mean-zero right-hand side")]
    ZeroModeUnsolvable,
    #[error("field length {got} does not match node count {want}")]
    LengthMismatch { got: usize, want: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Periodic,
}

struct Axis {
    /// Node-by-mode matrix, ℓ²-orthonormal columns.
    modes: DMatrix<f64>,
    /// Five-point eigenvalue per mode.
    lambda: Vec<f64>,
    /// Eigenvalue of the composite `−D_c D_c` per mode (periodic only).
    lambda_wide: Vec<f64>,
}

fn dirichlet_axis(n_cells: usize, h: f64) -> Axis {
    let m = n_cells - 1;
    let mut modes = DMatrix::zeros(m, m);
    let mut lambda = Vec::with_capacity(m);
    let norm = (2.0 / n_cells as f64).sqrt();
    for p in 1..=m {
        for i in 1..=m {
            modes[(i - 1, p - 1)] = norm * (p as f64 * PI * i as f64 / n_cells as f64).sin();
        }
        lambda.push((2.0 - 2.0 * (p as f64 * PI / n_cells as f64).cos()) / (h * h));
    }
    Axis { modes, lambda, lambda_wide: Vec::new() }
}

fn periodic_axis(n: usize, h: f64) -> Axis {
    let mut modes = DMatrix::zeros(n, n);
    let mut lambda = Vec::with_capacity(n);
    let mut lambda_wide = Vec::with_capacity(n);
    let mut col = 0usize;
    let mut push = |k: usize, is_sin: bool, modes: &mut DMatrix<f64>| {
        let (amp, nyquist) = if k == 0 || 2 * k == n {
            (1.0 / (n as f64).sqrt(), true)
        } else {
            ((2.0 / n as f64).sqrt(), false)
        };
        for i in 0..n {
            let ang = 2.0 * PI * k as f64 * i as f64 / n as f64;
            modes[(i, col)] = if is_sin { amp * ang.sin() } else { amp * ang.cos() };
        }
        let _ = nyquist;
        lambda.push((2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()) / (h * h));
        let s = (2.0 * PI * k as f64 / n as f64).sin();
        lambda_wide.push(s * s / (h * h));
        col += 1;
    };
    push(0, false, &mut modes);
    let half = n / 2;
    for k in 1..half {
        push(k, false, &mut modes);
        push(k, true, &mut modes);
    }
    if n % 2 == 0 {
        push(half, false, &mut modes);
    } else if half >= 1 {
        push(half, false, &mut modes);
        push(half, true, &mut modes);
    }
    Axis { modes, lambda, lambda_wide }
}

/// Eigenpairs of the grid Laplacian with tensorized transforms.
pub struct SpectralBasis {
    pub boundary_kind: BoundaryKind,
    grid: Arc<Grid>,
    ax: Axis,
    ay: Axis,
    /// Global eigenvalues sorted ascending alongside their (p, q) axis modes.
    sorted: Vec<(f64, usize, usize)>,
}

pub fn build_basis(grid: Arc<Grid>, kind: BoundaryKind) -> Result<SpectralBasis, SpectralError> {
    let ok = matches!(
        (kind, grid.spec.topology),
        (BoundaryKind::Dirichlet, Topology::Rectangle) | (BoundaryKind::Periodic, Topology::Torus)
    );
    if !ok {
        return Err(SpectralError::TopologyMismatch { kind, topology: grid.spec.topology });
    }
    let (ax, ay) = match kind {
        BoundaryKind::Dirichlet => {
            (dirichlet_axis(grid.spec.nx, grid.h), dirichlet_axis(grid.spec.ny, grid.h))
        }
        BoundaryKind::Periodic => {
            (periodic_axis(grid.spec.nx, grid.h), periodic_axis(grid.spec.ny, grid.h))
        }
    };
    let mut sorted = Vec::with_capacity(ax.lambda.len() * ay.lambda.len());
    for (q, lq) in ay.lambda.iter().enumerate() {
        for (p, lp) in ax.lambda.iter().enumerate() {
            sorted.push((lp + lq, p, q));
        }
    }
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(SpectralBasis { boundary_kind: kind, grid, ax, ay, sorted })
}

impl SpectralBasis {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn mode_count(&self) -> usize {
        self.sorted.len()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.sorted.iter().map(|s| s.0).collect()
    }

    /// Full-node eigenvector for the k-th (ascending) eigenvalue,
    /// orthonormal under the grid quadrature inner product.
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        let (_, p, q) = self.sorted[k];
        let mut field = vec![0.0; self.grid.node_count];
        let scale = 1.0 / self.grid.h;
        match self.boundary_kind {
            BoundaryKind::Dirichlet => {
                for jj in 0..self.ay.modes.nrows() {
                    for ii in 0..self.ax.modes.nrows() {
                        field[self.grid.idx(ii + 1, jj + 1)] =
                            self.ax.modes[(ii, p)] * self.ay.modes[(jj, q)] * scale;
                    }
                }
            }
            BoundaryKind::Periodic => {
                for jj in 0..self.grid.nrows {
                    for ii in 0..self.grid.ncols {
                        field[self.grid.idx(ii, jj)] =
                            self.ax.modes[(ii, p)] * self.ay.modes[(jj, q)] * scale;
                    }
                }
            }
        }
        field
    }

    fn active_matrix(&self, field: &[f64]) -> DMatrix<f64> {
        match self.boundary_kind {
            BoundaryKind::Dirichlet => {
                let (mx, my) = (self.ax.modes.nrows(), self.ay.modes.nrows());
                DMatrix::from_fn(mx, my, |ii, jj| field[self.grid.idx(ii + 1, jj + 1)])
            }
            BoundaryKind::Periodic => DMatrix::from_fn(self.grid.ncols, self.grid.nrows, |ii, jj| {
                field[self.grid.idx(ii, jj)]
            }),
        }
    }

    fn embed(&self, active: &DMatrix<f64>) -> Vec<f64> {
        let mut field = vec![0.0; self.grid.node_count];
        match self.boundary_kind {
            BoundaryKind::Dirichlet => {
                for jj in 0..active.ncols() {
                    for ii in 0..active.nrows() {
                        field[self.grid.idx(ii + 1, jj + 1)] = active[(ii, jj)];
                    }
                }
            }
            BoundaryKind::Periodic => {
                for jj in 0..active.ncols() {
                    for ii in 0..active.nrows() {
                        field[self.grid.idx(ii, jj)] = active[(ii, jj)];
                    }
                }
            }
        }
        field
    }

    /// Modal coefficients in axis-mode (p, q) layout, with respect to the
    /// quadrature-orthonormal eigenvectors.
    pub fn to_modes(&self, field: &[f64]) -> Result<DMatrix<f64>, SpectralError> {
        if field.len() != self.grid.node_count {
            return Err(SpectralError::LengthMismatch {
                got: field.len(),
                want: self.grid.node_count,
            });
        }
        let g = self.active_matrix(field);
        Ok(self.ax.modes.transpose() * g * &self.ay.modes * self.grid.h)
    }

    /// Inverse of [`Self::to_modes`]; Dirichlet boundary nodes come back zero.
    pub fn from_modes(&self, coeffs: &DMatrix<f64>) -> Vec<f64> {
        let g = &self.ax.modes * coeffs * self.ay.modes.transpose() / self.grid.h;
        self.embed(&g)
    }

    #[inline]
    pub fn lambda_pq(&self, p: usize, q: usize) -> f64 {
        self.ax.lambda[p] + self.ay.lambda[q]
    }

    /// Eigenvalue of the composite `−D_c D_c` operator (periodic only).
    #[inline]
    pub(crate) fn lambda_wide_pq(&self, p: usize, q: usize) -> f64 {
        self.ax.lambda_wide[p] + self.ay.lambda_wide[q]
    }

    /// `Σ g_i e^{−λ_i t} e_i`.
    pub fn heat_evolve(&self, field: &[f64], t: f64) -> Result<Vec<f64>, SpectralError> {
        if t < 0.0 {
            return Err(SpectralError::NegativeTime(t));
        }
        let mut coeffs = self.to_modes(field)?;
        for q in 0..coeffs.ncols() {
            for p in 0..coeffs.nrows() {
                coeffs[(p, q)] *= (-self.lambda_pq(p, q) * t).exp();
            }
        }
        Ok(self.from_modes(&coeffs))
    }

    /// Discrete Duhamel convolution: the solution of
    /// `σ̇ + Δσ = forcing, σ(0) = 0` sampled on the forcing's uniform time
    /// grid, with the forcing interpolated piecewise-linearly and each mode
    /// integrated exactly.
    pub fn duhamel(&self, forcing: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>, SpectralError> {
        assert!(dt > 0.0, "duhamel needs a positive time step");
        let steps = forcing.len();
        let mut out = Vec::with_capacity(steps);
        if steps == 0 {
            return Ok(out);
        }
        let coeffs: Vec<DMatrix<f64>> = forcing
            .iter()
            .map(|f| self.to_modes(f))
            .collect::<Result<_, _>>()?;
        let (mx, my) = (coeffs[0].nrows(), coeffs[0].ncols());
        let mut sigma = DMatrix::zeros(mx, my);
        out.push(self.from_modes(&sigma));
        for step in 1..steps {
            let mut next = DMatrix::zeros(mx, my);
            for q in 0..my {
                for p in 0..mx {
                    let lam = self.lambda_pq(p, q);
                    let z = -lam * dt;
                    let f0 = coeffs[step - 1][(p, q)];
                    let f1 = coeffs[step][(p, q)];
                    next[(p, q)] = z.exp() * sigma[(p, q)]
                        + dt * (phi1(z) * f0 + phi2(z) * (f1 - f0));
                }
            }
            sigma = next;
            out.push(self.from_modes(&sigma));
        }
        Ok(out)
    }

    /// `(Δ + shift)⁻¹ rhs` by modal division.
    pub fn poisson_solve(&self, rhs: &[f64], shift: f64) -> Result<Vec<f64>, SpectralError> {
        assert!(shift >= 0.0, "shift must be nonnegative");
        let mut coeffs = self.to_modes(rhs)?;
        let norm = coeffs.norm();
        for q in 0..coeffs.ncols() {
            for p in 0..coeffs.nrows() {
                let denom = self.lambda_pq(p, q) + shift;
                if denom.abs() < 1e-14 {
                    if coeffs[(p, q)].abs() > 1e-10 * norm.max(1.0) {
                        return Err(SpectralError::ZeroModeUnsolvable);
                    }
                    coeffs[(p, q)] = 0.0;
                } else {
                    coeffs[(p, q)] /= denom;
                }
            }
        }
        Ok(self.from_modes(&coeffs))
    }
}

/// `φ₁(z) = (e^z − 1)/z`, stable near zero.
pub(crate) fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `φ₂(z) = (e^z − 1 − z)/z²`, stable near zero.
pub(crate) fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0
    } else {
        (z.exp() - 1.0 - z) / (z * z)
    }
}
