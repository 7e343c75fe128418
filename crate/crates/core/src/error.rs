use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants group into three exit-code categories used by the CLI:
/// validation of inputs (1), numerical non-convergence (2), I/O (3).
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a precondition (shape, range, simplex, path layout, ...).
    #[error("{0}")]
    Validation(String),

    /// Input data did not match its declared file format.
    #[error("malformed input: {0}")]
    Format(String),

    /// Sinkhorn ran out of iterations before meeting the marginal tolerance.
    #[error("sinkhorn did not converge: marginal violation {violation:.3e} after {iterations} iterations")]
    SinkhornNotConverged { violation: f64, iterations: usize },

    /// Scaling factors left the representable range in plain (non-log) mode.
    #[error("numerical overflow in plain sinkhorn at iteration {iteration}; retry with log_domain = true")]
    SinkhornOverflow { iteration: usize },

    /// Barycenter iteration stopped before the successive-change tolerance.
    #[error("barycenter did not converge: iterate change {change:.3e} after {iterations} iterations")]
    BarycenterNotConverged { change: f64, iterations: usize },

    /// A loss or gradient became NaN/Inf during training.
    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    /// Filesystem failure, tagged with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A lower-level error with phase/agent/channel context attached.
    #[error("{label}: {source}")]
    Context {
        label: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a context label, e.g. `"agent 3, green channel"`.
    pub fn in_context(self, label: impl Into<String>) -> Self {
        Error::Context {
            label: label.into(),
            source: Box::new(self),
        }
    }

    /// CLI exit code for this error: 1 validation, 2 non-convergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Format(_) => 1,
            Error::SinkhornNotConverged { .. }
            | Error::SinkhornOverflow { .. }
            | Error::BarycenterNotConverged { .. }
            | Error::NonFinite(_) => 2,
            Error::Io { .. } => 3,
            Error::Context { source, .. } => source.exit_code(),
        }
    }
}

/// Attach a context label to the error of a result.
pub trait ResultExt<T> {
    fn context(self, label: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, label: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.in_context(label))
    }
}
