//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// CSV ingestion or dataset construction failure. `row` is 1-based over
    /// data rows (the header, when present, is not counted).
    #[error("ingestion error: {message}")]
    Ingestion {
        path: String,
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    /// A precondition of a library operation was violated.
    #[error("invalid argument to {operation}: {message}")]
    InvalidArgument {
        operation: &'static str,
        message: String,
    },

    /// A configuration field failed validation.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Training stopped before reaching the gradient tolerance.
    #[error("training did not converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    NonConvergence { grad_norm: f64, iterations: usize },

    /// The conjugate-gradient solve failed to reach its residual tolerance.
    #[error("inverse-HVP solve failed: relative residual {residual:.3e} after {iterations} iterations")]
    SolverFailure { residual: f64, iterations: usize },

    #[error("dimension mismatch in {operation}: expected {expected}, got {got}")]
    DimensionMismatch {
        operation: &'static str,
        expected: usize,
        got: usize,
    },

    /// Rank correlation is undefined (zero rank variance).
    #[error("correlation undefined: {message}")]
    UndefinedCorrelation { message: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn ingestion(path: &str, row: Option<usize>, column: Option<&str>, what: &str) -> Self {
        let mut message = format!("{path}: {what}");
        if let Some(r) = row {
            message.push_str(&format!(" (row {r}"));
            if let Some(c) = column {
                message.push_str(&format!(", column `{c}`"));
            }
            message.push(')');
        } else if let Some(c) = column {
            message.push_str(&format!(" (column `{c}`)"));
        }
        Error::Ingestion {
            path: path.to_string(),
            row,
            column: column.map(str::to_string),
            message,
        }
    }

    pub fn invalid(operation: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            operation,
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code contract: 2 config/validation, 3 numerical, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Ingestion { .. }
            | Error::InvalidArgument { .. }
            | Error::Config { .. }
            | Error::DimensionMismatch { .. } => 2,
            Error::NonConvergence { .. }
            | Error::SolverFailure { .. }
            | Error::UndefinedCorrelation { .. } => 3,
            Error::Io { .. } => 4,
        }
    }

    /// Stable machine-readable kind tag for summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ingestion { .. } => "ingestion",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::Config { .. } => "config",
            Error::NonConvergence { .. } => "non_convergence",
            Error::SolverFailure { .. } => "solver_failure",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UndefinedCorrelation { .. } => "undefined_correlation",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
