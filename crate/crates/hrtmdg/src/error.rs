//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing configuration (degree, wavenumber, flags, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Mesh file could not be parsed. Positions are 1-based.
    #[error("mesh parse error at line {line}, column {column}: {message}")]
    MeshParse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Mesh connectivity is unusable (non-manifold edge, inverted cell, ...).
    #[error("mesh topology error: {0}")]
    MeshTopology(String),

    /// The condensed flux block of one element is numerically singular, which
    /// happens when kappa^2 hits a discrete element resonance.
    #[error(
        "element {cell}: local flux block is numerically singular at kappa = {kappa} \
         (reciprocal condition estimate {rcond:.2e})"
    )]
    LocalResonance { cell: usize, kappa: f64, rcond: f64 },

    /// The assembled global system could not be factorized.
    #[error("global system is numerically singular at kappa = {kappa}: {message}")]
    SingularSystem { kappa: f64, message: String },

    /// An iterative solver ran out of iterations.
    #[error(
        "{method} stalled at relative residual {residual:.3e} after {iterations} \
         iterations (tolerance {tolerance:.1e})"
    )]
    IterativeDivergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    /// A guard against accidentally huge dense or monolithic solves.
    #[error("{what} has {size} unknowns, above the cap of {cap}")]
    SizeCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A verification probe ran to completion and rejected the result.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
