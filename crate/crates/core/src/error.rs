use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("insufficient rank: needed {needed} nonzero singular values, found {found}")]
    InsufficientRank { needed: usize, found: usize },

    #[error("sample larger than dictionary: {sample} columns requested from {available}")]
    SampleTooLarge { sample: usize, available: usize },

    #[error("degenerate dictionary block {block}: rank test failed after {attempts} resamples")]
    DegenerateBlock { block: usize, attempts: usize },

    #[error("too few points: {points} points for {clusters} clusters")]
    TooFewPoints { points: usize, clusters: usize },

    #[error("code longer than dictionary: {bits} bits from {atoms} atoms")]
    CodeLongerThanDictionary { bits: usize, atoms: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid rotation block {block}: orthogonality residual {residual:e}")]
    InvalidRotationBlock { block: usize, residual: f64 },

    #[error("k = {k} exceeds database size {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("undefined AP: query {query} has no relevant items")]
    UndefinedAp { query: usize },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
