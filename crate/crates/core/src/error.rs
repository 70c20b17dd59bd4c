use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown tensor factor `{0}`")]
    UnknownSlot(String),
    #[error("duplicate tensor factor label `{0}`")]
    DuplicateLabel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operands live on different Hilbert spaces")]
    SpaceMismatch,
    #[error("operator is not {0}")]
    WrongKind(&'static str),
    #[error("environment dimension must be at least 2, got {0}")]
    EnvTooSmall(usize),
    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("subspace vectors are not orthonormal")]
    NotOrthonormal,
    #[error("closure blowup: span dimension exceeded {max_dim}")]
    ClosureBlowup { max_dim: usize },
    #[error("non-regular point: intersection dimension varies between {low} and {high} near the state")]
    NonRegularPoint { low: usize, high: usize },
    #[error("interaction field vanishes at this state")]
    InteractionVanishes,
    #[error("rank deficiency: achieved {achieved} of {required}")]
    RankDeficiency { achieved: usize, required: usize },
    #[error("controls do not express the frame (relative residual {0:e})")]
    FrameNotExpressible(f64),
    #[error("control index {0} out of range")]
    InvalidIndex(usize),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("norm drift {0:e} exceeds the accepted bound")]
    NormDrift(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
