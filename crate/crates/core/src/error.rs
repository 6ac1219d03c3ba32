//! Error type shared by every module of the crate.

use thiserror::Error;

/// Everything that can go wrong while building lattices, propagating states,
/// or post-processing observables.
#[derive(Debug, Error)]
pub enum Error {
    /// Construction or call-site arguments violate a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix or vector does not match the lattice dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The adaptive integrator was driven below its minimum step size.
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    /// t̄ = ∫P(t)dt does not converge (locked state at p = 0, or PD with
    /// p = 1 freezing all transport).
    #[error("dwelling time diverges: {0}")]
    DivergentDwellingTime(String),

    /// The reinitialization estimator found no usable interior maximum of
    /// the decay rate γ(τ).
    #[error("degenerate decay-rate curve: {0}")]
    DegenerateEstimator(String),

    /// A linear-algebra or fitting step failed for numerical reasons
    /// (singular system, non-convergent refinement, ill-conditioned
    /// eigenbasis, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Propagated from the LAPACK wrappers.
    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

pub type Result<T> = std::result::Result<T, Error>;
