use num_bigint::BigInt;
use num_rational::BigRational;
use thiserror::Error;

/// Errors raised by the construction, polynomial, tower and diagnostic layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter sequences have mismatched lengths: {0}")]
    LengthMismatch(String),

    #[error("stage {stage}: cutting parameter p = {cut} must be at least 2")]
    CutTooSmall { stage: usize, cut: u64 },

    #[error("stage {stage}: spacer scale t = {spacing} must be an even non-negative integer")]
    InvalidSpacing { stage: usize, spacing: BigInt },

    #[error("stage {stage}: top spacer count {value} must be non-negative")]
    NegativeTopSpacer { stage: usize, value: BigInt },

    #[error("stage {stage}: offset distribution sums to {sum}, expected 1")]
    NotNormalized { stage: usize, sum: BigRational },

    #[error("stage {stage}: offset distribution has a negative mass {mass} at {atom}")]
    NegativeMass { stage: usize, atom: BigInt, mass: BigRational },

    #[error("stage {stage}: atom {atom} lies outside X = [-{half_width}, {half_width}]")]
    SupportOutside { stage: usize, atom: BigInt, half_width: BigInt },

    #[error("stage {stage}: offset x[{index}] = {value} lies outside [-{half_width}, {half_width}]")]
    OffsetOutOfRange { stage: usize, index: usize, value: BigInt, half_width: BigInt },

    #[error("stage {stage} out of range (construction has {stages} stages)")]
    StageOutOfRange { stage: usize, stages: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("window {requested} exceeds the largest valid window {max} for stage {stage}")]
    WindowTooLarge { stage: usize, requested: usize, max: usize },

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("the set F_eps is empty on the grid (phi = 1 everywhere at eps = {epsilon}); use the degenerate-case bound instead")]
    EmptyMask { epsilon: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
