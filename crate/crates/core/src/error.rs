use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration failed validation.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("folded system is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("integer overflow: {0}")]
    Overflow(String),

    #[error("expected {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },

    #[error("missing sample at grid point n={n}, k={k}, q={q}")]
    MissingSample { n: i64, k: usize, q: u32 },

    #[error("index {0} is not part of the system's index set")]
    NotSubset(i64),

    #[error("instant {t} lies outside the accurate interval of the block centered at {tau}")]
    OutsideInterval { t: f64, tau: f64 },

    #[error("no spectral support detected")]
    EmptySupport,

    #[error("malformed sample file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RankDeficient { .. } | Error::Overflow(_) => 3,
            _ => 2,
        }
    }
}
