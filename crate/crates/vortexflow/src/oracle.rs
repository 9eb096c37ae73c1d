//! Finite-dimensional moment-map flow on ℂⁿ under a torus action: a
//! brute-force-checkable model that pins every sign convention used by the
//! field theory before any PDE enters.
//!
//! For weights `w ∈ ℤ^{k×n}` and levels `τ ∈ ℝᵏ`, the moment map is
//! `Φ_j(x) = ½(τ_j − Σ_i w_{ji}|x_i|²)` and the descent flow of `½|Φ|²` is
//! `ẋ_i = (Σ_j w_{ji} Φ_j(x))·x_i`, matching the field theory's `u̇ = f·u`
//! at `n = k = w = 1`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dimension mismatch: model is {k}x{n}, point has {got} coordinates")]
    Dimension { k: usize, n: usize, got: usize },
    #[error("time step {dt} exceeds the stability bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("non-finite value during flow at t = {0}")]
    NonFinite(f64),
}

#[derive(Clone, Debug)]
pub struct FinDimModel {
    pub n: usize,
    pub k: usize,
    /// Row-major k×n integer weight matrix.
    pub weights: Vec<i64>,
    pub tau: Vec<f64>,
}

impl FinDimModel {
    pub fn new(n: usize, k: usize, weights: Vec<i64>, tau: Vec<f64>) -> Self {
        assert_eq!(weights.len(), k * n);
        assert_eq!(tau.len(), k);
        Self { n, k, weights, tau }
    }

    /// The scalar model: n = k = 1, weight 1.
    pub fn scalar(tau: f64) -> Self {
        Self::new(1, 1, vec![1], vec![tau])
    }

    #[inline]
    fn w(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.n + i] as f64
    }

    fn check_dim(&self, x: &[Complex64]) -> Result<(), OracleError> {
        if x.len() != self.n {
            return Err(OracleError::Dimension { k: self.k, n: self.n, got: x.len() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OrbitPoint {
    pub x: Vec<Complex64>,
}

pub fn findim_moment(model: &FinDimModel, x: &[Complex64]) -> Result<Vec<f64>, OracleError> {
    model.check_dim(x)?;
    Ok((0..model.k)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..model.n {
                s += model.w(j, i) * x[i].norm_sqr();
            }
            0.5 * (model.tau[j] - s)
        })
        .collect())
}

/// Descent direction `ẋ_i = (Σ_j w_{ji} Φ_j(x))·x_i`.
pub fn findim_descent(model: &FinDimModel, x: &[Complex64]) -> Result<Vec<Complex64>, OracleError> {
    let phi = findim_moment(model, x)?;
    Ok((0..model.n)
        .map(|i| {
            let rate: f64 = (0..model.k).map(|j| model.w(j, i) * phi[j]).sum();
            x[i] * rate
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSample {
    pub t: f64,
    pub phi_sq: f64,
    pub x_re: Vec<f64>,
    pub x_im: Vec<f64>,
}

/// Explicit-Euler trajectory of the descent of `½|Φ|²`.
pub fn findim_flow(
    model: &FinDimModel,
    x0: &[Complex64],
    dt: f64,
    t_end: f64,
) -> Result<Vec<FlowSample>, OracleError> {
    model.check_dim(x0)?;
    let phi0 = findim_moment(model, x0)?;
    let max_phi = phi0.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let max_w = model.weights.iter().fold(0i64, |m, w| m.max(w.abs())) as f64;
    let bound = 1.0 / (max_phi * max_w).max(1e-300);
    if dt > bound {
        return Err(OracleError::StepTooLarge { dt, bound });
    }
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut out = Vec::new();
    let sample = |t: f64, x: &[Complex64]| -> Result<FlowSample, OracleError> {
        let phi = findim_moment(model, x)?;
        Ok(FlowSample {
            t,
            phi_sq: phi.iter().map(|p| p * p).sum(),
            x_re: x.iter().map(|z| z.re).collect(),
            x_im: x.iter().map(|z| z.im).collect(),
        })
    };
    out.push(sample(0.0, &x)?);
    while t < t_end - 1e-14 {
        let step = dt.min(t_end - t);
        let v = findim_descent(model, &x)?;
        for i in 0..model.n {
            x[i] += v[i] * step;
            if !x[i].re.is_finite() || !x[i].im.is_finite() {
                return Err(OracleError::NonFinite(t));
            }
        }
        t += step;
        out.push(sample(t, &x)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct KempfNessReport {
    pub pairing: Vec<f64>,
    pub derivatives: Vec<f64>,
    pub monotone: bool,
}

/// Samples `t ↦ ⟨Φ(e^{ts·(i-direction)}x), s⟩` on `[0, 1]`; the complexified
/// direction of `s` scales `x_i` by `e^{−t(wᵀs)_i}`, and the pairing is
/// nondecreasing along it.
pub fn kempf_ness_check(
    model: &FinDimModel,
    x: &[Complex64],
    s: &[f64],
    samples: usize,
) -> Result<KempfNessReport, OracleError> {
    model.check_dim(x)?;
    assert_eq!(s.len(), model.k);
    assert!(s.iter().any(|v| *v != 0.0), "direction must be nonzero");
    assert!(samples >= 2);
    let dt = 1.0 / (samples - 1) as f64;
    let mut pairing = Vec::with_capacity(samples);
    for step in 0..samples {
        let t = step as f64 * dt;
        let xt: Vec<Complex64> = (0..model.n)
            .map(|i| {
                let rate: f64 = (0..model.k).map(|j| model.w(j, i) * s[j]).sum();
                x[i] * (-t * rate).exp()
            })
            .collect();
        let phi = findim_moment(model, &xt)?;
        pairing.push(phi.iter().zip(s.iter()).map(|(p, sj)| p * sj).sum());
    }
    let derivatives: Vec<f64> = pairing.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let monotone = derivatives.iter().all(|d| *d >= -1e-12);
    Ok(KempfNessReport { pairing, derivatives, monotone })
}
