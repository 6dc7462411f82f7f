use std::path::PathBuf;

/// Errors produced by the solvers, the accountant and the experiment harness.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A parameter was outside its documented range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a dimension did not.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A charge would push the ledger past its total budget.
    #[error("privacy budget exceeded by charge `{label}` ({requested} requested, {remaining} remaining)")]
    BudgetExceeded {
        label: String,
        requested: f64,
        remaining: f64,
    },

    /// Input points violate a caller obligation (e.g. not inside the starting ball).
    #[error("precondition violated: {message} (offending indices: {indices:?})")]
    Precondition { message: String, indices: Vec<usize> },

    /// Synthetic data generation could not make progress.
    #[error("generation error: {0}")]
    Generation(String),

    /// Malformed point file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
