use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes disagree at a tape node.
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("loss node {node} is {rows}x{cols}, expected a 1x1 scalar")]
    NonScalarLoss {
        node: usize,
        rows: usize,
        cols: usize,
    },

    #[error("unknown tape input `{0}`")]
    UnknownInput(String),

    #[error("unsupported op `{0}`")]
    UnsupportedOp(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value for parameter `{0}` after update")]
    NonFiniteParameter(String),

    /// Training produced non-finite values; usually a learning rate or
    /// adversarial weight that is too large.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// Input data failed validation (labels, dims, empty sets).
    #[error("invalid data: {0}")]
    Data(String),

    /// A binary file failed to parse.
    #[error("{0}")]
    Format(#[from] FormatError),

    #[error("live heap exceeded the {cap} byte cap")]
    MemCapExceeded { cap: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Named failures of the VGF1 and checkpoint readers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("not a {expected} file")]
    BadMagic { expected: &'static str },

    #[error("unsupported {format} version {found}")]
    BadVersion { format: &'static str, found: u32 },

    #[error("truncated header")]
    TruncatedHeader,

    #[error("size mismatch at video {index}: {detail}")]
    VideoSize { index: usize, detail: String },

    #[error("invalid record at video {index}: {detail}")]
    VideoRecord { index: usize, detail: String },

    #[error("non-finite value at video {index}")]
    VideoNonFinite { index: usize },

    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),

    #[error("invalid config block: {0}")]
    ConfigBlock(String),

    #[error("size mismatch at parameter {index}: {detail}")]
    ParamSize { index: usize, detail: String },

    #[error("invalid parameter record {index}: {detail}")]
    ParamRecord { index: usize, detail: String },

    #[error("invalid metric block: {0}")]
    MetricBlock(String),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or configuration.
    Validation,
    /// Anything that indicates a bug or environment failure.
    Internal,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Data(_)
            | Error::Format(_)
            | Error::Precondition(_)
            | Error::UnknownInput(_)
            | Error::UnsupportedOp(_) => ErrorClass::Validation,
            Error::Io(e) if e.kind() == io::ErrorKind::NotFound => ErrorClass::Validation,
            _ => ErrorClass::Internal,
        }
    }
}
