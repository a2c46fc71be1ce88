use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("operator is not positive definite: p^T A p = {curvature:e} at iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residuals {residuals:?})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("dense materialization of {rows}x{cols} exceeds the {limit} entry guard")]
    SizeGuard {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    #[error("invalid damping: {0}")]
    Damping(String),

    #[error("parse error in {path} at `{field}`: {message}")]
    Parse {
        path: String,
        field: String,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(
        context: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    /// Short machine-readable category, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Contract(_) => "contract",
            Error::Unsupported(_) => "unsupported",
            Error::NonFinite(_) => "non-finite",
            Error::Indefinite { .. } => "indefinite",
            Error::NotConverged { .. } => "not-converged",
            Error::SizeGuard { .. } => "size-guard",
            Error::Damping(_) => "damping",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}
