//! Shared error type for the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("axis {axis} has {points} points, need at least {required} for this stencil")]
    AxisTooSmall {
        axis: usize,
        points: usize,
        required: usize,
    },

    #[error("fields live on incompatible grids ({context})")]
    GridMismatch { context: &'static str },

    #[error("dimension {got} not supported: {reason}")]
    Dimension { got: usize, reason: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cutoff {cutoff} too small for |alpha|={alpha:.3}: truncated tail mass {tail:.3e}")]
    Truncation {
        cutoff: usize,
        alpha: f64,
        tail: f64,
    },

    #[error("mode functions not orthogonal: normalized overlap {overlap:.3e} exceeds {limit:.1e}")]
    NotOrthogonal { overlap: f64, limit: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations, final residual {residual:.3e}")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("CFL violation: dt={dt:.3e} exceeds allowed {max_dt:.3e}")]
    CflViolation { dt: f64, max_dt: f64 },

    #[error("field became non-finite at t={time:.6} (step {step})")]
    BlowUp { time: f64, step: usize },

    #[error("non-finite action value in derivative probe")]
    NonFiniteAction,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
