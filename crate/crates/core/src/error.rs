use alloc::string::String;
use core::fmt;

/// Errors surfaced by the core algorithms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A class label does not fit the label scheme.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// Keyword span annotations are malformed (unsorted, overlapping, or
    /// out of token bounds).
    InvalidSpans(String),
    /// Vocabulary construction was given no sentence pairs.
    EmptyCorpus,
    /// An operation that needs at least one example got none.
    EmptyDataset,
    /// The encoded sequence cannot fit CLS, two SEPs, and one token per
    /// sentence.
    MaxLenTooSmall { max_len: usize },
    /// A token id falls outside the embedding table.
    TokenIdOutOfRange { id: u32, vocab_size: usize },
    /// Two distributions (or arrays) that must share a class count do not.
    ClassCountMismatch { left: usize, right: usize },
    /// A pooled group (keyword or intent) has no member positions.
    EmptyGroup { group: &'static str },
    /// A numeric input or gradient is NaN or infinite.
    NonFinite { what: String },
    /// A configuration value is invalid.
    InvalidConfig(String),
    /// Training or analysis needs keyword annotations that are missing.
    MissingKeywordTags(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes}-class scheme")
            }
            Error::InvalidSpans(msg) => write!(f, "invalid keyword spans: {msg}"),
            Error::EmptyCorpus => write!(f, "cannot build a vocabulary from an empty corpus"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::MaxLenTooSmall { max_len } => {
                write!(f, "max_len {max_len} too small: need at least 5 positions")
            }
            Error::TokenIdOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} out of range for vocabulary of size {vocab_size}")
            }
            Error::ClassCountMismatch { left, right } => {
                write!(f, "class count mismatch: {left} vs {right}")
            }
            Error::EmptyGroup { group } => write!(f, "no {group} positions to pool"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::MissingKeywordTags(msg) => write!(f, "missing keyword annotations: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
