//! Discretized flat surface (torus or rectangle) with quadrature weights and
//! boundary bookkeeping.
//!
//! Nodes are colocated: every field in this crate is a flat vector indexed by
//! `j * ncols + i` with `i` along x and `j` along y. A torus of `nx × ny`
//! cells has `nx·ny` nodes (periodic identification); a rectangle has
//! `(nx+1)·(ny+1)` nodes including the boundary. Quadrature is uniform `h²`
//! on the torus and trapezoid-weighted on the rectangle, so `integrate(1)`
//! is the surface area exactly.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("non-uniform spacing: lx/nx = {hx} but ly/ny = {hy}")]
    NonUniformSpacing { hx: f64, hy: f64 },
    #[error("grid too coarse: nx and ny must be >= 4, got {nx} x {ny}")]
    TooCoarse { nx: usize, ny: usize },
    #[error("side lengths must be positive, got lx = {lx}, ly = {ly}")]
    BadLength { lx: f64, ly: f64 },
    #[error("field length {got} does not match node count {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("inner product arguments have different kinds")]
    KindMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Torus,
    Rectangle,
}

/// Construction parameters for a grid: topology, cell counts and side lengths.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub topology: Topology,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(topology: Topology, nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        Self { topology, nx, ny, lx, ly }
    }
}

/// Immutable grid: spacing, per-node quadrature weights and boundary mask.
#[derive(Clone, Debug)]
pub struct Grid {
    pub spec: GridSpec,
    pub h: f64,
    /// Nodes per row (x direction).
    pub ncols: usize,
    /// Number of rows (y direction).
    pub nrows: usize,
    pub node_count: usize,
    /// True exactly on rectangle edge nodes; identically false on the torus.
    pub boundary_mask: Vec<bool>,
    /// Quadrature weight per node; sums to `lx·ly`.
    pub area_weight: Vec<f64>,
}

pub fn build_grid(spec: GridSpec) -> Result<Grid, GridError> {
    if !(spec.lx > 0.0) || !(spec.ly > 0.0) {
        return Err(GridError::BadLength { lx: spec.lx, ly: spec.ly });
    }
    if spec.nx < 4 || spec.ny < 4 {
        return Err(GridError::TooCoarse { nx: spec.nx, ny: spec.ny });
    }
    let hx = spec.lx / spec.nx as f64;
    let hy = spec.ly / spec.ny as f64;
    if (hx - hy).abs() > 1e-12 * hx.max(hy) {
        return Err(GridError::NonUniformSpacing { hx, hy });
    }
    let h = hx;
    let (ncols, nrows) = match spec.topology {
        Topology::Torus => (spec.nx, spec.ny),
        Topology::Rectangle => (spec.nx + 1, spec.ny + 1),
    };
    let node_count = ncols * nrows;
    let mut boundary_mask = vec![false; node_count];
    let mut area_weight = vec![h * h; node_count];
    if spec.topology == Topology::Rectangle {
        for j in 0..nrows {
            for i in 0..ncols {
                let on_x = i == 0 || i == ncols - 1;
                let on_y = j == 0 || j == nrows - 1;
                let idx = j * ncols + i;
                if on_x || on_y {
                    boundary_mask[idx] = true;
                }
                // trapezoid rule: ½ per boundary axis, ¼ at corners
                let mut w = h * h;
                if on_x {
                    w *= 0.5;
                }
                if on_y {
                    w *= 0.5;
                }
                area_weight[idx] = w;
            }
        }
    }
    Ok(Grid { spec, h, ncols, nrows, node_count, boundary_mask, area_weight })
}

impl Grid {
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ncols + i
    }

    /// Node coordinate `(x, y)`; on the torus the fundamental domain is `[0, lx) × [0, ly)`.
    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h, j as f64 * self.h)
    }

    pub fn is_torus(&self) -> bool {
        self.spec.topology == Topology::Torus
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary_mask.iter().filter(|&&b| b).count()
    }

    pub fn interior_count(&self) -> usize {
        self.node_count - self.boundary_count()
    }

    /// Quadrature sum `Σ field·area_weight` in node-index order.
    pub fn integrate(&self, field: &[f64]) -> Result<f64, GridError> {
        if field.len() != self.node_count {
            return Err(GridError::LengthMismatch { got: field.len(), want: self.node_count });
        }
        let mut acc = 0.0;
        for (v, w) in field.iter().zip(self.area_weight.iter()) {
            acc += v * w;
        }
        Ok(acc)
    }

    pub fn l2_inner(&self, f: FieldRef<'_>, g: FieldRef<'_>) -> Result<f64, GridError> {
        let check = |len: usize| -> Result<(), GridError> {
            if len != self.node_count {
                Err(GridError::LengthMismatch { got: len, want: self.node_count })
            } else {
                Ok(())
            }
        };
        match (f, g) {
            (FieldRef::Scalar(a), FieldRef::Scalar(b)) => {
                check(a.len())?;
                check(b.len())?;
                let mut acc = 0.0;
                for k in 0..self.node_count {
                    acc += a[k] * b[k] * self.area_weight[k];
                }
                Ok(acc)
            }
            (FieldRef::OneForm(ax, ay), FieldRef::OneForm(bx, by)) => {
                check(ax.len())?;
                check(ay.len())?;
                check(bx.len())?;
                check(by.len())?;
                let mut acc = 0.0;
                for k in 0..self.node_count {
                    acc += (ax[k] * bx[k] + ay[k] * by[k]) * self.area_weight[k];
                }
                Ok(acc)
            }
            (FieldRef::Complex(a), FieldRef::Complex(b)) => {
                check(a.len())?;
                check(b.len())?;
                let mut acc = 0.0;
                for k in 0..self.node_count {
                    acc += (a[k].conj() * b[k]).re * self.area_weight[k];
                }
                Ok(acc)
            }
            _ => Err(GridError::KindMismatch),
        }
    }

    pub fn l2_norm_scalar(&self, f: &[f64]) -> f64 {
        self.l2_inner(FieldRef::Scalar(f), FieldRef::Scalar(f))
            .expect("shape checked by caller")
            .max(0.0)
            .sqrt()
    }

    pub fn l2_norm_complex(&self, f: &[Complex64]) -> f64 {
        self.l2_inner(FieldRef::Complex(f), FieldRef::Complex(f))
            .expect("shape checked by caller")
            .max(0.0)
            .sqrt()
    }

    pub fn l2_norm_one_form(&self, fx: &[f64], fy: &[f64]) -> f64 {
        self.l2_inner(FieldRef::OneForm(fx, fy), FieldRef::OneForm(fx, fy))
            .expect("shape checked by caller")
            .max(0.0)
            .sqrt()
    }

    pub fn area(&self) -> f64 {
        self.spec.lx * self.spec.ly
    }
}

/// Argument to [`Grid::l2_inner`]; the variant fixes the pairing
/// (one-forms sum both components, complex uses `Re(f̄ g)`).
#[derive(Clone, Copy)]
pub enum FieldRef<'a> {
    Scalar(&'a [f64]),
    OneForm(&'a [f64], &'a [f64]),
    Complex(&'a [Complex64]),
}
