//! Numerical laboratory for the stochastic nonlinear Schrödinger equation
//!
//! ```text
//! du = (-i A u - lambda Psi^R(||u||) |u|^{2 sigma} u) dt + sqrt(eps) g(t, u) dW
//! ```
//!
//! on `(0, 1)` with Dirichlet conditions, driven by a Q-Wiener process.
//! The state is represented in the sine basis `e_k = sqrt(2) sin(k pi x)`.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod exit;
pub mod noise;
pub mod seed;
pub mod spectral;
pub mod stats;

pub use action::{
    action_of_control, minimize_action, rate_lower_envelope, ActionProblem, ActionResult, GradientMethod,
    OptimizerOptions, TargetSpec,
};
pub use dynamics::{Control, PathRecord, SdeParams, SdeSystem, TimeGrid};
pub use error::{Error, Result};
pub use exit::{ExitConfig, ExitEstimate};
pub use noise::{CovarianceSpec, DiffusionFamily, DiffusionSpec, H0Vector};
pub use spectral::{Grid, NormKind, SpectralField};
