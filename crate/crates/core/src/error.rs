use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifold mismatch: {left} vs {right}")]
    KindMismatch { left: String, right: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point outside its domain: {0}")]
    OutsideDomain(String),

    #[error("singular gradient: {0}")]
    Singularity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("empty support: {0}")]
    EmptySupport(String),

    #[error("malformed input at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("feature matrix still degenerate after {rounds} repair rounds")]
    IrreparableDegeneracy { rounds: usize },

    #[error("feature matrix is degenerate; repair before solving")]
    Degenerate,

    #[error("moment constraints infeasible (residual {residual:.3e})")]
    InfeasibleConstraints { residual: f64 },

    #[error("dual solver did not converge in {iterations} iterations (residuals {res_s:.3e}, {res_d:.3e})")]
    NotConverged {
        iterations: usize,
        res_s: f64,
        res_d: f64,
    },

    #[error("invalid negative proposal: {0}")]
    InvalidProposal(String),

    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("series too short: need at least {need}, got {got}")]
    SeriesTooShort { need: usize, got: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable numeric category, used by the CLI as a process exit code.
    pub fn category_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Csv(_) => 3,
            Error::Json(_) | Error::Parse { .. } | Error::Checkpoint(_) => 4,
            Error::KindMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::IndexOutOfRange(_) => 5,
            Error::OutsideDomain(_) | Error::Singularity(_) | Error::NonFiniteGradient(_) => 6,
            Error::EmptySupport(_)
            | Error::Degenerate
            | Error::IrreparableDegeneracy { .. }
            | Error::InfeasibleConstraints { .. }
            | Error::NotConverged { .. }
            | Error::InvalidProposal(_)
            | Error::SeriesTooShort { .. } => 7,
        }
    }
}
