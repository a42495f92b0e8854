use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    DimensionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("quadratic fit is rank deficient (patch {patch})")]
    SingularFit { patch: usize },

    #[error(
        "linear solver did not converge after {iterations} iterations \
         (relative residual {relative_residual:.3e}, tolerance {tolerance:.1e})"
    )]
    LinearSolve {
        iterations: usize,
        relative_residual: f64,
        tolerance: f64,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularFit { .. } | Error::LinearSolve { .. } | Error::ReplayMismatch(_) => 3,
            Error::Format(_) | Error::Json(_) => 4,
            Error::DimensionMismatch { .. }
            | Error::InvalidInput(_)
            | Error::OutOfRange(_)
            | Error::Io(_)
            | Error::File { .. } => 2,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::OutOfRange(_) => "out_of_range",
            Error::SingularFit { .. } => "singular_fit",
            Error::LinearSolve { .. } => "solver_failure",
            Error::Format(_) => "format",
            Error::ReplayMismatch(_) => "replay_mismatch",
            Error::Io(_) | Error::File { .. } => "io",
            Error::Json(_) => "format",
        }
    }

    /// Wraps an io error with the path it concerns.
    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
