//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid codec config: d_p must be at least 1")]
    InvalidConfig,

    #[error("empty token: no bytes remain after truncation (input had {byte_len} bytes)")]
    EmptyToken { byte_len: usize },

    #[error("byte position {pos} out of range for d_p = {d_p}")]
    PositionOutOfRange { pos: usize, d_p: usize },

    #[error("degenerate standard deviation: cannot z-normalize an all-equal vector")]
    DegenerateStd,

    #[error("token {id} truncates to zero bytes (original length {byte_len})")]
    TokenTruncatedEmpty { id: u32, byte_len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("codepoint U+{codepoint:04X} in piece {piece:?} is outside the byte-level alphabet")]
    UnmappedCodepoint { codepoint: u32, piece: String },

    #[error("vocab format error: {0}")]
    VocabFormat(String),

    #[error("duplicate token id {id} (pieces {first:?} and {second:?})")]
    DuplicateId { id: u32, first: String, second: String },

    #[error("vocabulary ids are not dense: {missing} id(s) missing below max id {max_id} (first gap at {first_gap})")]
    IdGaps { missing: usize, max_id: u32, first_gap: u32 },

    #[error("piece {piece:?} (id {id}) decodes to zero bytes")]
    EmptyPiece { id: u32, piece: String },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },

    #[error("file format error in {path}: {reason}")]
    FileFormat { path: String, reason: String },

    #[error("piece not found; tried variants {tried:?}")]
    PieceNotFound { tried: Vec<String> },

    #[error("query mode requires a codec-backed embedding space")]
    QueryModeMismatch,

    #[error("query vector has zero norm")]
    ZeroNormQuery,

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
