use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("coincidence order {order} out of range 1..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("coincidence order {0} is missing from the scan")]
    MissingOrder(usize),

    #[error("grid dimension mismatch: expected {expected_nx}x{expected_ny}, found {found_nx}x{found_ny}")]
    DimensionMismatch {
        expected_nx: usize,
        expected_ny: usize,
        found_nx: usize,
        found_ny: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("missing required field `{0}`")]
    MissingField(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad user input (config, parameters, files).
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::InvalidParameter { .. }
                | Error::OrderOutOfRange { .. }
                | Error::MissingOrder(_)
                | Error::DimensionMismatch { .. }
                | Error::NonFinite(_)
                | Error::Parse { .. }
                | Error::MissingField(_)
        )
    }
}
