use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("unknown question (class {0})")]
    UnknownQuestion(u32),
    #[error("sequence complete: prefix length {0} reached max length")]
    SequenceComplete(usize),
    #[error("token {token} out of range for vocabulary of size {size}")]
    TokenOutOfRange { token: usize, size: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("group too small: {0} members, need at least 2")]
    GroupTooSmall(usize),
    #[error("malformed group: {0}")]
    MalformedGroup(String),
    #[error("stale rollout: trajectory from policy version {found}, expected {expected}")]
    StaleRollout { expected: u64, found: u64 },
    #[error("empty buffer")]
    EmptyBuffer,
    #[error("buffer underflow: requested {requested}, available {available}")]
    BufferUnderflow { requested: usize, available: usize },
    #[error("corrupt accuracy {acc} for group size {group_size}")]
    CorruptAccuracy { acc: f64, group_size: usize },
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("oracle limit: {0} trajectories exceeds the enumeration budget")]
    OracleLimit(u64),
    #[error("vocabulary too small: alphabet of {alphabet} needs {needed} non-end tokens, vocabulary has {available}")]
    VocabularyTooSmall {
        alphabet: usize,
        needed: usize,
        available: usize,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corrupt snapshot at line {line} (byte offset {offset}): {message}")]
    CorruptSnapshot {
        line: usize,
        offset: usize,
        message: String,
    },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
