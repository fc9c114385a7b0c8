//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by watermark construction, sampling, and verification.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vocabulary must contain at least 2 tokens, got {0}")]
    VocabTooSmall(usize),
    #[error("mask id {mask_id} out of range for vocabulary of size {size}")]
    MaskOutOfRange { mask_id: usize, size: usize },
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("row {row} sums to {sum:.12}, outside tolerance of 1")]
    NonStochasticRow { row: usize, sum: f64 },
    #[error("negative entry {value} at row {row}, column {col}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("token/mask vectors disagree in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("diffusion time {0} outside [0, 1]")]
    InvalidTime(f64),
    #[error("modulus must be at least 1")]
    ZeroModulus,
    #[error("offset {offset} not below modulus {modulus}")]
    OffsetOutOfRange { offset: u32, modulus: u32 },
    #[error("invalid key encoding: {0}")]
    BadKey(String),
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("row {row} has no token with positive probability")]
    AllZeroRow { row: usize },
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("cannot re-mask {k} of {d} positions")]
    KTooLarge { k: usize, d: usize },
    #[error("green list rounds to zero tokens")]
    EmptyGreenList,
    #[error("invalid green-list parameters: {0}")]
    BadGreenParams(String),
    #[error("noise increment must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("state token {token} at position {position} has zero probability")]
    ZeroProbabilityState { position: usize, token: usize },
    #[error("denoising row {position} lost all probability mass")]
    DegenerateRow { position: usize },
    #[error("index {k} out of range for sequence of length {len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("substitution fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("{got} trials too few: need at least {needed}")]
    InsufficientTrials { needed: usize, got: usize },
    #[error("score set is empty")]
    EmptyScoreSet,
}

pub type Result<T> = std::result::Result<T, Error>;
