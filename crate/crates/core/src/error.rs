use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("dimension {dim} exceeds the supported Sobol table size {max}")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("baseline requires at least one previously evaluated design")]
    EmptyHistory,

    #[error("active set of size {size} exceeds the exact-enumeration cap {cap}; use greedy pruning")]
    ActiveSetTooLarge { size: usize, cap: usize },

    #[error("invalid gap rule: {0}")]
    InvalidGapRule(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("accuracy assertion failed (pruning bug): {0}")]
    AccuracyViolation(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn with_round(self, round: usize) -> Error {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}
