use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("wrong length: expected {expected}, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("infeasible code parameters: {0}")]
    InfeasibleParameters(String),
    #[error("no full-rank parity matrix found after {attempts} attempts")]
    ConstructionFailed { attempts: u32 },
    #[error("non-finite LLR at position {index}")]
    NonFiniteInput { index: usize },
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("bisection bracket [{low_db}, {high_db}] dB does not straddle the threshold")]
    BracketFailure { low_db: f64, high_db: f64 },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user input or configuration rather than
    /// by a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleParameters(_)
                | Error::InvalidSpec(_)
                | Error::ConfigMismatch(_)
                | Error::Format(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::WrongLength { .. }
                | Error::DomainError(_)
        )
    }
}
