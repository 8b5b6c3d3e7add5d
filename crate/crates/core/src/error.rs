use thiserror::Error;

use crate::bench::RunHistory;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum ApdError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("unsupported structure: {0}")]
    Unsupported(String),

    #[error("power iteration did not converge after {iterations} iterations (best estimate {best}, residual {residual:e})")]
    Convergence {
        best: f64,
        iterations: usize,
        residual: f64,
    },

    /// Carries the trajectory recorded up to the last finite state.
    #[error("integration produced a non-finite state at t = {t}")]
    Integration {
        t: f64,
        history: Option<Box<RunHistory>>,
    },

    /// Carries the history recorded up to the failing iteration.
    #[error("solver diverged at iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        history: Option<Box<RunHistory>>,
    },

    #[error("reference run did not reach the residual floor: residual {residual:e} > {floor:e}; increase the iteration budget")]
    ReferenceFloor { residual: f64, floor: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ApdError {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        ApdError::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    /// True for errors caused by bad user input (config, parameters, files).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ApdError::DimensionMismatch { .. }
                | ApdError::InvalidParameter(_)
                | ApdError::InvalidProblem(_)
                | ApdError::Unsupported(_)
                | ApdError::Config(_)
                | ApdError::Json(_)
                | ApdError::Csv(_)
        )
    }

    /// True for numerical blow-ups of an iterative method.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            ApdError::Divergence { .. } | ApdError::Integration { .. }
        )
    }

    /// The partial history attached to a divergence, if any.
    pub fn history(&self) -> Option<&RunHistory> {
        match self {
            ApdError::Integration { history, .. } | ApdError::Divergence { history, .. } => {
                history.as_deref()
            }
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ApdError>;
