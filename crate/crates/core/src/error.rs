use thiserror::Error;

/// Errors raised by the toolkit. The variant is the error category reported
/// by the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },

    #[error("decomposition error: {0}")]
    Decomposition(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("parse error at {file}:{line}:{column}: {msg}")]
    Parse {
        file: String,
        line: u64,
        column: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Bad input or files, as opposed to a numerical failure.
    pub fn is_input(&self) -> bool {
        matches!(self, Error::Input(_) | Error::Domain(_) | Error::Parse { .. } | Error::Io { .. })
    }

    pub(crate) fn numeric(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Numeric {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
