use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{axis} index {index} out of range (len {len})")]
    OutOfRange {
        axis: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rank deficient: sigma_{rank} / sigma_1 = {ratio:e}")]
    RankDeficient { rank: usize, ratio: f64 },

    #[error("non-uniform time grid; exact DMD needs uniform spacing, use optimized DMD instead")]
    NonUniformTime,

    #[error("divergent exponential basis: Re(alpha) * t = {0} exceeds 700")]
    BasisOverflow(f64),

    #[error("initialization failed: {0}; supply alpha0 explicitly")]
    Initialization(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short stable tag for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Corrupt { .. } => "corrupt",
            Error::Validation(_) => "validation",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Shape(_) => "shape",
            Error::Precondition(_) => "precondition",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::NonUniformTime => "non_uniform_time",
            Error::BasisOverflow(_) => "basis_overflow",
            Error::Initialization(_) => "initialization",
            Error::Numerical(_) => "numerical",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
