use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io error: {0}")]
    RawIo(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("duplicate source ids: {}", .0.join(", "))]
    DuplicateSourceIds(Vec<String>),
    #[error("unknown tokenizer id {0:?}")]
    UnknownTokenizer(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("no positive-score documents for the query ({query_terms} distinct terms)")]
    NoPositiveScore { query_terms: usize },
    #[error("token budget {budget} is smaller than the top-ranked document (doc {doc_id}, {doc_tokens} tokens)")]
    BudgetTooSmall { budget: u64, doc_id: u64, doc_tokens: u64 },
    #[error("keyword weight undefined for a count of zero")]
    ZeroCount,
    #[error("distractor pool too small: need {needed} distinct non-gold diagnoses, found {found}")]
    PoolTooSmall { needed: usize, found: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
