use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("matrix is not symmetric (max |G_ij - G_ji| = {max_abs:e})")]
    SymmetryViolation { max_abs: f64 },
    #[error("matrix expected to be PSD has eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("value outside likelihood domain: {0}")]
    Domain(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },
    #[error("eigen-index {k} exceeds numerical rank {rank}")]
    Rank { k: usize, rank: usize },
    #[error("attack diverged: {0}")]
    AttackDiverged(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated data: {0}")]
    Length(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
