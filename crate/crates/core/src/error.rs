use std::path::PathBuf;

/// Errors raised by configuration, simulation and analysis routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported honesty regime: gamma = {0} (gamma must exceed 1)")]
    UnsupportedHonesty(f64),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("empty population")]
    EmptyPopulation,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("outside invariant manifold: (x, y, z) = ({x}, {y}, {z})")]
    OutsideManifold { x: f64, y: f64, z: f64 },

    #[error("integration failure: {0}")]
    IntegrationFailure(String),

    #[error("instance too large for exact enumeration: (N+1)^T = {leaves} exceeds {limit}")]
    InstanceTooLarge { leaves: f64, limit: u64 },

    #[error("decoding impossible: targets coincide at {0}")]
    DecodingImpossible(f64),

    #[error("mismatched supports: {0}")]
    MismatchedSupport(String),

    #[error("consistency failure: {0}")]
    Consistency(String),

    #[error("malformed input {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration or input data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::UnsupportedHonesty(_)
                | Error::InvalidGraph(_)
                | Error::EmptyPopulation
                | Error::InvalidConfig(_)
                | Error::Malformed { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
