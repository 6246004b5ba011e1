use std::process::ExitCode;

use thiserror::Error;

/// Failures by exit code: 2 configuration, 3 solver, 4 gradient check,
/// 1 anything else (I/O, corrupt inputs).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure at frame {frame}: {source}")]
    Solver {
        frame: usize,
        #[source]
        source: facesim::Error,
    },

    #[error("gradient check failed: {0}")]
    Gradcheck(String),

    #[error(transparent)]
    Core(#[from] facesim::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Solver { .. } => 3,
            CliError::Gradcheck(_) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        })
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Wraps a per-frame error: solver failures keep the frame index, bad
    /// inputs stay what they are.
    pub fn at_frame(frame: usize, e: facesim::Error) -> Self {
        use facesim::Error as E;
        match e {
            E::NotPositiveDefinite
            | E::NanEnergy { .. }
            | E::CgNotConverged { .. }
            | E::LineSearch { .. }
            | E::Penetration(_)
            | E::NotConverged(_)
            | E::Solver(_)
            | E::NonFinite(_) => CliError::Solver { frame, source: e },
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
