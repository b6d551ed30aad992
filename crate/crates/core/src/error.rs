use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("skeleton topology: {0}")]
    Topology(String),
    #[error("joint limit {dof} has lower bound {lo} above upper bound {hi}")]
    LimitOrder { dof: usize, lo: f64, hi: f64 },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bone {bone} has non-positive length {length}")]
    NonPositiveLength { bone: usize, length: f64 },
    #[error("spherical harmonic degree mismatch: {0} vs {1}")]
    ShDegreeMismatch(u8, u8),
    #[error("unsupported spherical harmonic degree {0}")]
    UnsupportedShDegree(u8),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty skinning template")]
    EmptyTemplate,
    #[error("gaussian cloud is empty")]
    EmptyCloud,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("only {valid} valid joints, at least {needed} required")]
    TooFewJoints { valid: usize, needed: usize },
    #[error("timestamp {t} is not after previous timestamp {prev}")]
    NonIncreasingTimestamp { prev: f64, t: f64 },
    #[error("fingertip joint {0} is missing or not valid")]
    InvalidTip(usize),
    #[error("joint {0} is not valid in any frame")]
    JointNeverValid(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
