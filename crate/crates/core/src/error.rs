use thiserror::Error;

/// Errors raised by the kbqd library.
#[derive(Debug, Error)]
pub enum KbqdError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("non-finite value in input data at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("too few observations: {what} needs at least {min}, got {got}")]
    TooFewObservations { what: String, min: usize, got: usize },

    #[error("at least 2 groups are required, got {0}")]
    TooFewGroups(usize),

    #[error("gram matrix is already centered")]
    AlreadyCentered,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, KbqdError>;

impl KbqdError {
    /// True for errors caused by user-supplied data or configuration, as
    /// opposed to failures during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            KbqdError::Input(_)
                | KbqdError::Config(_)
                | KbqdError::Io(_)
                | KbqdError::Csv(_)
                | KbqdError::TooFewGroups(_)
                | KbqdError::InvalidParameter(_)
                | KbqdError::InvalidBandwidth(_)
        )
    }
}
