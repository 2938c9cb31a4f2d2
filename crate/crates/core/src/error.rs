use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no basis parameters for atomic number {0}")]
    UnknownElement(u32),

    #[error("overlap matrix is near-singular (smallest eigenvalue {min_eigenvalue:.3e})")]
    LinearDependence { min_eigenvalue: f64 },

    #[error(
        "SCF not converged after {iterations} iterations (last rms density change {last_rms:.3e})"
    )]
    ScfNotConverged {
        iterations: usize,
        last_rms: f64,
        last_energy: f64,
    },

    #[error("unsupported environment: {0}")]
    UnsupportedEnvironment(String),

    #[error("invalid molecular system: {0}")]
    InvariantViolation(String),

    #[error("rotation matrix is not proper (|det - 1| = {0:.3e})")]
    InvalidRotation(f64),

    #[error("({l1}, {l2}) cannot couple to degree {l}")]
    SelectionRuleViolation { l1: usize, l2: usize, l: usize },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("no trained charge shift for total charge {0}")]
    UnknownChargeState(i32),

    #[error("attention normalization denominator is not positive ({0:.3e})")]
    DegenerateAttention(f64),

    #[error("low-level result missing or unconverged for sample {0}")]
    MissingLowLevel(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
