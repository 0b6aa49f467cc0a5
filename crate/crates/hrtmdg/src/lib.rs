//! Hybrid mixed discontinuous Galerkin solver for the 2D Helmholtz equation.
//!
//! The interior problem `Delta u + kappa^2 u = f_tilde` with Dirichlet
//! data `g` is rewritten as a first-order system for `(sigma, u)` with
//! `sigma = i grad(u) / kappa`, discretized per triangle with Raviart-Thomas
//! flux and discontinuous polynomial trace spaces, and glued through edge
//! multipliers. Element unknowns are condensed out, so the only globally
//! coupled unknowns are the multipliers on interior edges.
//!
//! Module layout:
//! * [`mesh`]: triangulations of polygonal domains, structured generator, ASCII io.
//! * [`refelem`]: reference triangle bases (orthonormal P_k, RT_k) and quadrature.
//! * [`local`]: per-element block assembly and static condensation.
//! * [`global`]: multiplier system assembly, linear solvers, field recovery.
//! * [`analysis`]: projections, norms, and the verification probe suite.
//! * [`mms`]: manufactured solutions and convergence studies.
//! * [`cli`]: command line entry point.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod global;
pub mod local;
pub mod mesh;
pub mod mms;
pub mod refelem;
pub mod sparse;

pub use error::{Error, Result};

/// Complex scalar type used throughout.
pub type C64 = num_complex::Complex64;

/// Shorthand for `C64::new`.
#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Problem data for the first-order system: the volume term of the
/// second-order equation (scaled internally by i/kappa) and the Dirichlet
/// boundary values.
pub trait ProblemData {
    fn f_tilde(&self, p: [f64; 2]) -> C64;
    fn g(&self, p: [f64; 2]) -> C64;
}
