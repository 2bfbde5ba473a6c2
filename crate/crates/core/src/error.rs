use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("negative or non-finite distance at ({0}, {1})")]
    BadDistance(usize, usize),
    #[error("distinct points {0} and {1} are at distance zero")]
    Coincident(usize, usize),
    #[error("triangle inequality fails for ({0}, {1}, {2})")]
    Triangle(usize, usize, usize),
    #[error("weight {index} must be positive and finite, got {value}")]
    BadWeight { index: usize, value: f64 },
    #[error("dominating function is not usable: {0}")]
    Lambda(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("function has {got} values but the space has {expected} points")]
    Length { expected: usize, got: usize },
    #[error("balls are not geometrically nested: {0}")]
    NotNested(String),
    #[error("kernel is singular on the diagonal and no diagonal convention was chosen")]
    SingularDiagonal,
    #[error("point {0} of the level set could not be assigned a ball")]
    Unselectable(usize),
    #[error("decomposition invariant broken: {0}")]
    Invariant(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
