use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("infeasible alignment: {frames} frames cannot carry a label sequence needing {required}")]
    InfeasibleAlignment { frames: usize, required: usize },
    #[error("incompatible language model: {0}")]
    IncompatibleLm(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenRange { id: usize, size: usize },
    #[error("invalid domain spec: {0}")]
    Spec(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("checksum mismatch in {0}")]
    Crc(PathBuf),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::Missing(format!("{} does not exist", path.display()));
        }
        Error::Io { path, source }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Short machine-parseable tag, used by the CLI for one-line errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Numeric(_) => "numeric",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::InfeasibleAlignment { .. } => "infeasible-alignment",
            Error::IncompatibleLm(_) => "incompatible-lm",
            Error::TokenRange { .. } => "token-range",
            Error::Spec(_) => "spec",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Crc(_) => "crc-mismatch",
            Error::Missing(_) => "file-not-found",
            Error::Io { .. } => "io",
        }
    }
}
