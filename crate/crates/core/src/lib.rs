//! Numerical toolkit for hallucinated minimizers of sharpness-aware
//! minimization (SAM).
//!
//! A hallucinated minimizer is a local minimizer of
//! `f^SAM(x) = f(x + rho * grad f(x) / |grad f(x)|)` at which `grad f(x) != 0`.
//! The crate evaluates SAM objectives and gradients, builds such points
//! explicitly from a maximizer/minimizer pair, detects them on converged
//! trajectories, checks the attractor condition and traces their continuation
//! along a curve of true minimizers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constructor;
pub mod detector;
pub mod error;
pub mod field;
pub mod export;
pub mod landscape;
pub mod manifold;
pub mod mlp;
pub mod sam;
mod sampling;

#[cfg(test)]
mod properties;

pub use error::{Error, Result};
pub use landscape::{make_builtin, Builtin, Matrix, Objective, ScalarField, Vector};
pub use sam::{Mode, SamConfig, TerminalStatus, Trajectory};
