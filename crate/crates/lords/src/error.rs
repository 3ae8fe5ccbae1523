use thiserror::Error;

/// Errors produced by the library.
///
/// File-format problems get their own variants rather than one catch-all so
/// callers (the CLI in particular) can map each failure class to a distinct
/// exit code.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or divisibility violation (mismatched shapes, block size not
    /// dividing the column count, rank out of range, and so on).
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument outside its documented domain that is not a shape issue.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Underlying filesystem failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// File does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// File ends before the header-declared payload, or carries extra bytes.
    #[error("truncated or malformed file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    /// Header declares a dtype, dimensionality, or version this reader does
    /// not support.
    #[error("unsupported format field: {0}")]
    Unsupported(String),

    /// Header carries an invalid codebook or representation tag, or packed
    /// codes decode to an out-of-range level index.
    #[error("invalid encoding: {0}")]
    Encoding(String),

    /// Numeric failure: SVD iteration cap reached, non-finite values where
    /// finite ones are required, or a diverging training loss.
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn encoding(msg: impl Into<String>) -> Self {
        Error::Encoding(msg.into())
    }
}
