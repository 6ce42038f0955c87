use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("rank {rank} out of range for a {d1}x{d2} layer (need 1 <= r <= {max})", max = .d1.min(.d2))]
    RankOutOfRange { rank: usize, d1: usize, d2: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} at position {pos} is outside the vocabulary ({vocab} entries)")]
    OutOfVocab { id: u32, pos: usize, vocab: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("loss has no target tokens")]
    NoTargets,
    #[error("non-finite loss {loss} at {phase} step {step}")]
    NonFiniteLoss { phase: String, step: u64, loss: f64 },
    #[error("{0}")]
    Data(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checkpoint checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] dapt_core::Error),
}
