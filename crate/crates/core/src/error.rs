use thiserror::Error;

pub type Result<T> = std::result::Result<T, DfrcError>;

#[derive(Debug, Error)]
pub enum DfrcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("unknown constellation `{0}`")]
    UnknownConstellation(String),

    #[error("matrix is not Hermitian positive semidefinite: {0}")]
    NotHermitianPsd(String),

    /// The transmit design produces no target return.
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    /// The communication requirement cannot be met. Indices are 1-based.
    #[error(
        "communication SINR requirement {required_db:.2} dB unattainable: subcarrier {subcarrier}, \
         user {user} reaches at most {achieved_db:.2} dB"
    )]
    Infeasible {
        subcarrier: usize,
        user: usize,
        achieved_db: f64,
        required_db: f64,
    },

    #[error("channel on subcarrier {subcarrier} is degenerate: {reason}")]
    ChannelDegenerate { subcarrier: usize, reason: String },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
