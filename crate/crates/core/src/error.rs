use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("rate bound violated in regime {regime}: q_i = {rate} exceeds declared bound {bound}")]
    BoundViolation { regime: usize, rate: f64, bound: f64 },

    #[error("step size too large: dt * M = {product} exceeds 0.1")]
    StepSize { product: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("simulation failed on path {path} at step {step} ({completed} paths completed): {message}")]
    Simulation {
        path: usize,
        step: usize,
        completed: usize,
        message: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Expr(e) if e.is_parse() => 2,
            Error::Json(_) | Error::Usage(_) | Error::Io(_) | Error::Validation(_) => 2,
            Error::Model(_) | Error::Domain(_) => 2,
            Error::Capacity(_) => 5,
            Error::Expr(_)
            | Error::BoundViolation { .. }
            | Error::StepSize { .. }
            | Error::Numerical(_)
            | Error::Simulation { .. } => 4,
        }
    }
}
