use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NonceError {
    #[error("empty nonce value")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UrlError {
    #[error("invalid url {url:?}: {reason}")]
    Invalid { url: String, reason: String },
    #[error("url {0:?} has no host")]
    NoHost(String),
    #[error("unsupported scheme in {0:?}")]
    Scheme(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TargetError {
    #[error("invalid domain name {0:?}")]
    InvalidDomain(String),
    #[error("invalid rank {0:?}")]
    InvalidRank(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(&'static str),
    #[error("targets file line {line}: {message}")]
    TargetsFile { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("catalog line {line}: {message}")]
pub struct CatalogError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in {path} line {line}: {source}")]
    Record {
        path: std::path::PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path} has no site record")]
    MissingSite { path: std::path::PathBuf },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl ReportError {
    pub(crate) fn io(path: impl Into<std::path::PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| ReportError::Io { path, source }
    }
}
