use thiserror::Error;

use crate::parity_mlp::PartialCurves;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge within {evaluations} evaluations (partial estimate {partial:e})")]
    Quadrature { partial: f64, evaluations: usize },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    #[error("insufficient transition: {points} points inside the accuracy band, need at least {required}")]
    InsufficientTransition { points: usize, required: usize },

    #[error("training diverged at epoch {epoch}")]
    Divergence {
        epoch: usize,
        partial: Box<PartialCurves>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
