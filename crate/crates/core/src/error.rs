use thiserror::Error;

use crate::Vector;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown builtin objective `{0}`")]
    UnknownObjective(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate in input point")]
    NonFinite,

    /// The normalized ascent direction does not exist because the gradient
    /// norm is below the floor.
    #[error("SAM objective undefined at critical point (|grad f| = {grad_norm:e})")]
    UndefinedAtCritical { grad_norm: f64 },

    #[error("iteration diverged at step {step}")]
    Diverged { step: usize, last_finite: Vector },

    #[error("attractor condition violated: gamma = {gamma} <= 0 at a sampled point")]
    AttractorViolated { gamma: f64 },

    #[error("superlevel component reaches the box boundary (epsilon too large or box too small)")]
    ComponentEscapesBox,

    #[error("seed point is not a local grid maximum: {0}")]
    NotLocalMaximum(String),

    #[error("construction unsupported in dimension {0}")]
    UnsupportedDimension(usize),

    #[error("Jacobian I + rho*grad u is singular (smallest singular value {0:e})")]
    SingularJacobian(f64),

    #[error("Newton iteration did not converge in {iters} steps (residual {residual:e})")]
    NewtonNoConvergence { iters: usize, residual: f64 },

    #[error("continuation start point is not x_h + rho*u(x_h) (mismatch {0:e})")]
    ContinuationStart(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
