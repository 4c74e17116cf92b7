//! Monotone finite-difference quadrature schemes for nonlocal, nonlinear,
//! possibly degenerate parabolic equations
//! `u_t - L[phi(u)] = f` on R^N, where `L` is a symmetric Lévy operator
//! (local diffusion plus a singular integral part).

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod levy_measure;
pub mod nonlinearity;
pub mod operators;
pub mod quad;
pub mod reference;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{make_grid, uniform_time_grid, Grid, GridFunction, TimeGrid};
pub use levy_measure::{LevyMeasure, Symmetry};
pub use nonlinearity::{Nonlinearity, Regularization};
pub use stepper::{SchemeSpec, SolverPolicy};

pub use operators::{AdmissibilityReport, FarField, OperatorPlan, StencilOperator};
