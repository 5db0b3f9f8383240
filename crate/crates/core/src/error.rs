use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: String,
        found: String,
    },

    #[error("{what} is not Hermitian: max |M_ij - conj(M_ji)| = {violation:e}")]
    NotHermitian { what: String, violation: f64 },

    #[error("{what} trace is {value} (expected 1)")]
    Trace { what: String, value: f64 },

    #[error("{what} is not positive semidefinite: min eigenvalue {min_eigenvalue:e}")]
    NotPositive { what: String, min_eigenvalue: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for dimension {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("singular dispersion at epsilon = {epsilon}, k = {k}: |d epsilon/dk| = {derivative:e}")]
    SingularDispersion {
        epsilon: f64,
        k: f64,
        derivative: f64,
    },

    #[error("composite dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("state eigenvalue {eigenvalue:e} below floor {floor:e}; logarithm undefined")]
    SingularState { eigenvalue: f64, floor: f64 },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dimension(what: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl ToString) -> Self {
        Error::Config {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 config, 2 numeric/invariant, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
