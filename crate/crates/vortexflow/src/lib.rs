//! Gradient ("heat") flow of the abelian vortex functional
//! `½‖*F_A + ½(τ − |u|²)‖²_{L²}` on discretized flat tori and rectangles.
//!
//! A configuration is a pair `(A, u)` of a real U(1) gauge potential and a
//! complex scalar field on a uniform grid. The scalar
//!
//! ```text
//! f = *F_A + ½(τ − |u|²)
//! ```
//!
//! drives everything: `f = 0` is the vortex equation, `½‖f‖²` is the energy
//! functional of the flow, and its descent directions are `Ȧ = *df`,
//! `u̇ = f·u`. The crate provides
//!
//! - direct explicit stepping of the flow ([`flow::euler_step`]),
//! - the augmented `(a, F, ξ)` system with `F` an independent field subject
//!   to a Dirichlet boundary condition, stepped by an exponential IMEX
//!   integrator ([`flow::imex_step`]) or solved on a short time window by a
//!   contraction (Picard) iteration ([`flow::picard_solve`]),
//! - the gauge-invariant scalar flow for `σ = ½ log h` and Newton projection
//!   onto the vortex equation ([`gauge_ops`]),
//! - spectral heat/Poisson solvers on the flat Laplacian eigenbasis
//!   ([`spectral`]),
//! - a finite-dimensional moment-map flow on ℂⁿ used to lock sign
//!   conventions ([`oracle`]),
//! - batch running, serialization and a verification suite ([`cli`]).

pub mod cli;
pub mod fields;
pub mod flow;
pub mod gauge_ops;
pub mod grid;
pub mod moment;
pub mod newton;
pub mod oracle;
pub mod rng;
pub mod spectral;

#[cfg(test)]
pub(crate) mod test_support;
