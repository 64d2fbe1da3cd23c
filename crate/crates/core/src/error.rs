use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(
        "operator is not Hermitian: |A[{row}][{col}] - conj(A[{col}][{row}])| = {deviation:e}"
    )]
    NotHermitian {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("state has zero or non-finite norm")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid direction: theta={theta}, phi={phi}")]
    InvalidDirection { theta: f64, phi: f64 },

    #[error("dimension {0} exceeds the eigensolver limit of {max}", max = crate::algebra::MAX_DIM)]
    TooLarge(usize),

    #[error("negative occupancy {0}")]
    NegativeOccupancy(f64),

    #[error("insufficient data: need at least 2 trials, have {0}")]
    InsufficientData(u64),

    #[error("readings from different trials or channels paired: {0}")]
    ReadingMismatch(String),

    #[error("cannot merge accumulators of different scenarios ({0:#x} vs {1:#x})")]
    ScenarioMismatch(u64, u64),

    #[error("invalid configuration: {0}")]
    Config(String),
}
