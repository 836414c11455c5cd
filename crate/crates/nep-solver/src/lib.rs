//! Solvers for N-player Nash equilibrium problems constrained by a linear
//! elliptic PDE, discretized with piecewise linear finite elements on
//! structured triangulations of axis-aligned rectangles.
//!
//! Each player controls a source term supported on its own subdomain and
//! minimizes a tracking functional subject to shared box constraints on the
//! control and a penalized upper bound on the joint state. The equilibrium
//! conditions reduce to a projection fixed-point equation for the control
//! vector, which this crate solves with two equivalent outer iterations:
//!
//! * a semi-smooth Newton method applied to the projection equation, with
//!   the linearized step solved matrix-free by GMRES ([`Method::SemismoothNewton`]),
//! * a primal-dual active set method that assembles and factorizes the
//!   reduced saddle-point system per iteration ([`Method::ActiveSet`]).
//!
//! Both methods classify nodes into lower-active, upper-active, and inactive
//! control sets plus a state-penalty support set, and terminate when the
//! classification stops changing. [`diagnostics`] post-processes the iterate
//! history into convergence tables (numeric contraction order, error rates
//! against a known solution, set-change counts).
//!
//! Two benchmark problems ship with the crate: a four-player partition of
//! the unit square with piecewise constant targets
//! ([`problem::make_example1`]) and a manufactured four-player problem on
//! `(-1,1)^2` with a known closed-form equilibrium
//! ([`problem::make_example2`]).

// Index loops over several same-length slices are the clearest form for the
// assembly and stencil kernels here.
#![allow(clippy::needless_range_loop)]

pub mod diagnostics;
pub mod linalg;
pub mod mesh_fem;
pub mod problem;
pub mod semismooth;
pub mod solvers;

use std::fmt;

/// Runtime failures surfaced by the linear algebra layer and the solvers.
///
/// Precondition violations (mismatched lengths, invalid bounds, out-of-range
/// indices) are programming errors and panic via `assert!` instead.
#[derive(Debug, Clone)]
pub enum Error {
    /// A sparse factorization could not be computed (structurally or
    /// numerically singular matrix).
    Factorization(String),
    /// GMRES exhausted its iteration budget before reaching the requested
    /// relative residual. Carries the best iterate found so it can be
    /// inspected or reused.
    GmresStalled {
        /// Total inner iterations performed.
        iterations: usize,
        /// Relative Euclidean residual of `best`.
        relative_residual: f64,
        /// Iterate at the smallest observed residual.
        best: Vec<f64>,
    },
    /// Power iteration did not settle to the requested tolerance.
    PowerIterationStalled {
        /// Rayleigh quotient estimate from the final sweep.
        last_estimate: f64,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Factorization(msg) => write!(f, "sparse factorization failed: {msg}"),
            Error::GmresStalled {
                iterations,
                relative_residual,
                ..
            } => write!(
                f,
                "gmres stalled after {iterations} iterations at relative residual {relative_residual:.3e}"
            ),
            Error::PowerIterationStalled { last_estimate } => write!(
                f,
                "power iteration did not converge, last estimate {last_estimate:.3e}"
            ),
        }
    }
}

impl std::error::Error for Error {}
