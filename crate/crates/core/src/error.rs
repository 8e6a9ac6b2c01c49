use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("acquisition: {0}")]
    Acquisition(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid boundary layer: {0}")]
    Boundary(String),
    #[error("numerically singular system at pivot {0}")]
    Singular(usize),
    #[error("invalid covariance: {0}")]
    Covariance(String),
    #[error("dense system of dimension {dim} exceeds memory budget of {budget} bytes")]
    MemoryBudget { dim: usize, budget: usize },
    #[error("non-finite objective at iteration {0}")]
    NonFinite(usize),
    #[error("invalid optimizer config: {0}")]
    Optimizer(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
