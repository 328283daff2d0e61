use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped by [`ErrorKind`] so front ends can map them onto
/// process exit codes without matching every case.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed line {line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: missing field {field} at line {line}", path.display())]
    MissingField {
        path: PathBuf,
        field: &'static str,
        line: u64,
    },

    #[error("{}: invalid UTF-8 at byte offset {offset}", path.display())]
    InvalidUtf8 { path: PathBuf, offset: u64 },

    #[error("{}: checksum mismatch (manifest {expected:016x}, file {actual:016x})", path.display())]
    ChecksumMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty training corpus for {0}")]
    EmptyCorpus(String),

    #[error("insufficient text: {found} non-whitespace characters, at least {required} required")]
    InsufficientText { found: usize, required: usize },

    #[error("incompatible signatures: {0}")]
    IncompatibleSignatures(String),

    #[error("duplicate document id {0}")]
    DuplicateId(String),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },

    #[error("tokenizer has no CLS token")]
    MissingClsToken,

    #[error("tokenizer has no SEP token")]
    MissingSepToken,

    #[error("score matrix has missing cells in row {0}; run impute_missing first")]
    MissingCells(String),

    #[error("score matrix row {0} has no present cells")]
    EmptyRow(String),

    #[error("no studentized-range constant for k={k}, alpha={alpha}")]
    QTableRange { k: usize, alpha: f64 },

    #[error("stage {stage} failed on document {doc_id}: {source}")]
    Stage {
        stage: String,
        doc_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse error classification used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Internal,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::QTableRange { .. } => {
                ErrorKind::Config
            }
            Error::Invariant(_) => ErrorKind::Internal,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
