//! Quantitative contraction and Newton solvers, shared by vortex
//! projection, Coulomb gauge fixing and the Picard short-time solver.
//!
//! `contraction_solve` iterates `x ← F₁⁻¹(target − F₂(x))` inside a ball of
//! radius `delta`, reporting per-iteration contraction ratios; leaving the
//! ball is a status, not a failure, so callers can shrink their problem
//! (halve the time window) and retry. `newton_solve` is a full Newton
//! iteration with residual-norm backtracking.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error("entry check failed: ‖F₂(0) − target‖ = {got} exceeds δ/4c = {bound}")]
    EntryCheck { got: f64, bound: f64 },
    #[error("newton stagnated: residual reduction below 1e-3 over 5 iterations (residual {0})")]
    Stagnation(f64),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    LeftBall,
    MaxIters,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub contraction_ratios: Vec<f64>,
    pub status: SolveStatus,
    /// Set when the caller supplied a Lipschitz estimate for F₂: whether
    /// every observed ratio stayed below `2c·Lip`.
    pub ratio_bound_ok: Option<bool>,
}

pub struct ContractionProblem<'a> {
    pub apply_f1_inverse: Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>,
    pub apply_f2: Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>,
    /// Ball radius.
    pub delta: f64,
    /// Bound on ‖F₁⁻¹‖.
    pub c: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub norm: Box<dyn Fn(&[f64]) -> f64 + 'a>,
    /// Optional Lipschitz estimate for F₂ on the ball.
    pub lipschitz_f2: Option<f64>,
}

pub fn contraction_solve(
    problem: &ContractionProblem<'_>,
    target: &[f64],
) -> Result<SolveReport, NewtonError> {
    contraction_solve_from(problem, target, &vec![0.0; target.len()])
}

/// Same iteration started from `x0`; the spec's iteration starts at 0,
/// alternative starts exist to test injectivity on the ball.
pub fn contraction_solve_from(
    problem: &ContractionProblem<'_>,
    target: &[f64],
    x0: &[f64],
) -> Result<SolveReport, NewtonError> {
    let n = target.len();
    let f2_zero = (problem.apply_f2)(&vec![0.0; n]);
    let mismatch: Vec<f64> = f2_zero.iter().zip(target.iter()).map(|(a, b)| a - b).collect();
    let entry = (problem.norm)(&mismatch);
    let bound = problem.delta / (4.0 * problem.c);
    if entry > bound {
        return Err(NewtonError::EntryCheck { got: entry, bound });
    }

    let mut x = x0.to_vec();
    let mut ratios = Vec::new();
    let mut prev_step: Option<f64> = None;
    let mut step_norm = f64::INFINITY;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIters;
    for _ in 0..problem.max_iters {
        iterations += 1;
        let f2x = (problem.apply_f2)(&x);
        let rhs: Vec<f64> = target.iter().zip(f2x.iter()).map(|(t, f)| t - f).collect();
        let x_next = (problem.apply_f1_inverse)(&rhs);
        let step: Vec<f64> = x_next.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        step_norm = (problem.norm)(&step);
        if let Some(p) = prev_step {
            if p > 0.0 {
                ratios.push(step_norm / p);
            }
        }
        prev_step = Some(step_norm);
        x = x_next;
        if (problem.norm)(&x) > problem.delta {
            status = SolveStatus::LeftBall;
            break;
        }
        if step_norm < problem.tol {
            status = SolveStatus::Converged;
            break;
        }
    }
    let ratio_bound_ok = problem.lipschitz_f2.map(|lip| {
        let bound = 2.0 * problem.c * lip;
        ratios.iter().all(|r| *r <= bound + 1e-12)
    });
    Ok(SolveReport {
        solution: x,
        iterations,
        final_residual: step_norm,
        contraction_ratios: ratios,
        status,
        ratio_bound_ok,
    })
}

/// Full Newton iteration on `residual(x) = 0`.
///
/// `linearization_solve(x, r)` must return `d` with `J(x)·d = r`; the update
/// is `x ← x − d` with residual-norm backtracking (at most 10 halvings).
/// `contraction_ratios` holds successive residual-norm quotients.
pub fn newton_solve(
    residual: &dyn Fn(&[f64]) -> Vec<f64>,
    linearization_solve: &dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>, NewtonError>,
    norm: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<SolveReport, NewtonError> {
    let mut x = x0.to_vec();
    let mut r = residual(&x);
    let mut rn = norm(&r);
    let mut ratios = Vec::new();
    let mut history = vec![rn];
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIters;
    while iterations < max_iters {
        if rn < tol {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let d = linearization_solve(&x, &r)?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=10 {
            let trial: Vec<f64> =
                x.iter().zip(d.iter()).map(|(xi, di)| xi - scale * di).collect();
            let r_trial = residual(&trial);
            let rn_trial = norm(&r_trial);
            if rn_trial < rn || scale < 1.0 / 1024.0 {
                ratios.push(if rn > 0.0 { rn_trial / rn } else { 0.0 });
                x = trial;
                r = r_trial;
                rn = rn_trial;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(NewtonError::Stagnation(rn));
        }
        history.push(rn);
        if history.len() > 5 {
            let old = history[history.len() - 6];
            if rn > (1.0 - 1e-3) * old && rn >= tol {
                return Err(NewtonError::Stagnation(rn));
            }
        }
    }
    if rn < tol {
        status = SolveStatus::Converged;
    }
    Ok(SolveReport {
        solution: x,
        iterations,
        final_residual: rn,
        contraction_ratios: ratios,
        status,
        ratio_bound_ok: None,
    })
}

// ── linear solves ───────────────────────────────────────────────────

/// Banded LU without pivoting, for the narrow-band elliptic operators
/// assembled from the grid stencils (they are diagonally dominant wherever
/// the potential is positive). Returns `None` on a vanishing pivot so
/// callers can fall back to a dense factorization.
pub(crate) struct BandedLu {
    n: usize,
    band: usize,
    /// Row-major storage of the 2·band+1 diagonals.
    data: Vec<f64>,
}

impl BandedLu {
    /// Factor the operator given by its action on basis vectors.
    pub(crate) fn factor(n: usize, band: usize, apply: &dyn Fn(&[f64]) -> Vec<f64>) -> Option<Self> {
        let width = 2 * band + 1;
        let mut data = vec![0.0; n * width];
        let mut unit = vec![0.0; n];
        for col in 0..n {
            unit[col] = 1.0;
            let image = apply(&unit);
            unit[col] = 0.0;
            let lo = col.saturating_sub(band);
            let hi = (col + band + 1).min(n);
            for (row, v) in image.iter().enumerate() {
                if *v != 0.0 {
                    assert!(
                        (lo..hi).contains(&row),
                        "operator entry ({row},{col}) outside declared band {band}"
                    );
                    data[row * width + (col + band - row)] = *v;
                }
            }
        }
        // in-place LU within the band
        for k in 0..n {
            let pivot = data[k * width + band];
            if pivot.abs() < 1e-200 {
                return None;
            }
            let imax = (k + band + 1).min(n);
            for i in k + 1..imax {
                let off = k + band - i; // column k in row i
                let factor = data[i * width + off] / pivot;
                data[i * width + off] = factor;
                if factor != 0.0 {
                    let jmax = (k + band + 1).min(n);
                    for j in k + 1..jmax {
                        let contrib = factor * data[k * width + (j + band - k)];
                        data[i * width + (j + band - i)] -= contrib;
                    }
                }
            }
        }
        Some(Self { n, band, data })
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let width = 2 * self.band + 1;
        let mut y = rhs.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.band);
            for k in lo..i {
                let factor = self.data[i * width + (k + self.band - i)];
                if factor != 0.0 {
                    y[i] -= factor * y[k];
                }
            }
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.band + 1).min(self.n);
            for j in i + 1..hi {
                let v = self.data[i * width + (j + self.band - i)];
                if v != 0.0 {
                    y[i] -= v * y[j];
                }
            }
            y[i] /= self.data[i * width + self.band];
        }
        y
    }
}

/// Solve a narrow-band linear operator given matrix-free; banded LU first,
/// dense factorization (for systems below 4096 unknowns) as fallback.
pub(crate) fn solve_banded_operator(
    n: usize,
    band: usize,
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
) -> Result<Vec<f64>, NewtonError> {
    if let Some(lu) = BandedLu::factor(n, band, apply) {
        return Ok(lu.solve(rhs));
    }
    if n <= 4096 {
        let mut mat = nalgebra::DMatrix::zeros(n, n);
        let mut unit = vec![0.0; n];
        for col in 0..n {
            unit[col] = 1.0;
            let image = apply(&unit);
            unit[col] = 0.0;
            for (row, v) in image.iter().enumerate() {
                mat[(row, col)] = *v;
            }
        }
        let lu = mat.lu();
        let sol = lu
            .solve(&nalgebra::DVector::from_column_slice(rhs))
            .ok_or_else(|| NewtonError::LinearSolve("singular dense system".into()))?;
        return Ok(sol.iter().copied().collect());
    }
    Err(NewtonError::LinearSolve(format!(
        "banded factorization failed and {n} unknowns exceed the dense fallback"
    )))
}
