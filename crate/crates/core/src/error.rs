use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DlmeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DlmeError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A documented precondition of an operation does not hold.
    #[error("contract violated: {0}")]
    Contract(String),

    /// Argument outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no sign change bracketing a root: {0}")]
    Bracket(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DlmeError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        DlmeError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DlmeError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics (as opposed to bad input or configuration).
    pub fn is_numeric(&self) -> bool {
        matches!(self, DlmeError::Divergence { .. })
    }
}
