use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty domain")]
    EmptyDomain,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate element {element}: {reason}")]
    DegenerateElement { element: usize, reason: String },

    #[error("point {index} lies outside every element")]
    PointOutside { index: usize },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("transform is not rigid (orthogonality error {0:e})")]
    NonRigid(f64),

    #[error("K not positive definite - check attachments")]
    NotPositiveDefinite,

    #[error("NaN energy at iteration {iteration}")]
    NanEnergy { iteration: usize },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("line search failure at sweep {sweep} (alpha {alpha:e})")]
    LineSearch { sweep: usize, alpha: f64 },

    #[error("configuration is penetrating: {0}")]
    Penetration(String),

    #[error("state is not converged (gradient norm {0:e})")]
    NotConverged(f64),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("inverted mapping Jacobian (det {0:e})")]
    InvertedJacobian(f64),

    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),

    #[error("degenerate primitive: {0}")]
    DegeneratePrimitive(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
