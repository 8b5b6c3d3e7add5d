//! Accelerated primal-dual dynamics for separable convex problems with
//! linear equality constraints.
//!
//! - [`problem`]: block functions, constrained problems, Lagrangian, proximal maps.
//! - [`spectral`]: largest singular value by power iteration.
//! - [`rates`]: rate coefficients, regime classification, exponent estimators.
//! - [`flow`]: continuous-time primal-dual flow with Lyapunov diagnostics.
//! - [`apd`]: the discrete accelerated primal-dual solver.
//! - [`lpmm`]: linearized proximal ADMM baseline and reference solutions.
//! - [`bench`]: instance generators, run histories, rate fits and experiments.

pub mod apd;
pub mod bench;
pub mod error;
pub mod flow;
pub mod lpmm;
pub mod problem;
pub mod rates;
pub mod spectral;

pub use error::{ApdError, Result};
