use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("direction vector has length {0:e}, agents coincide")]
    DegenerateVector(f64),

    #[error("no measurement epochs supplied")]
    EmptyInput,

    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),

    #[error("translation scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("equality constraints are inconsistent (residual {0:e})")]
    Infeasible(f64),

    #[error("need at least {required} epochs, got {got}")]
    TooFewEpochs { required: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
