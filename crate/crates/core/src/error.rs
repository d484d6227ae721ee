use thiserror::Error;

/// Failure modes shared across the core crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector norm below zero guard")]
    ZeroVector,
    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("expert set is empty")]
    EmptyExpertSet,
    #[error("transport plan is not square ({0}x{1})")]
    NonSquare(usize, usize),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("unresolved trajectory id {0}")]
    UnresolvedTrajectoryId(u64),
    #[error("action is not finite")]
    NonFiniteAction,
    #[error("state does not match task")]
    TaskMismatch,
    #[error("expert search failed for seed {0}")]
    ExpertSearchFailed(u64),
    #[error("could not fill return bin {0}")]
    InsufficientDiversity(usize),
    #[error("trajectory returns are tied")]
    TiedReturns,
    #[error("retry budget exhausted")]
    RetryExhausted,
    #[error("attribution undefined for all-zero weights")]
    ZeroWeights,
    #[error("success threshold not calibrated")]
    UncalibratedTask,
    #[error("no demonstrations supplied")]
    EmptyDemos,
    #[error("log-density is not finite")]
    NonFiniteDensity,
    #[error("trace lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("trace is constant")]
    ConstantTrace,
    #[error("evaluation pool is empty")]
    EmptyPool,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
