use thiserror::Error;

/// Errors raised by the operator, cone, level-set and certification layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("level {sigma} is at or above the probed diagonal supremum {sup}")]
    LevelAboveSup { sigma: f64, sup: f64 },

    #[error("level {sigma} is below the range of the operator on the diagonal")]
    LevelBelowRange { sigma: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("tangent intercept unbounded below on the level set (observed {observed})")]
    UnboundedBelow { observed: f64 },

    #[error("inconsistency: {0}")]
    Inconsistency(String),

    #[error("no admissible witness: {0}")]
    NoWitness(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
