use thiserror::Error;

use crate::ideal::IdealSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input (config, table, file contents).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A numerical procedure could not produce a result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested density lies inside the uncertainty interval of the
    /// saturation density; both branch solutions are attached when they exist.
    #[error("ambiguous phase: rho = {rho} lies inside the saturation interval [{lo}, {hi}]")]
    AmbiguousPhase {
        rho: f64,
        lo: f64,
        hi: f64,
        unsaturated: Option<Box<IdealSolution>>,
        saturated: Option<Box<IdealSolution>>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
