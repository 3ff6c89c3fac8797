use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dense-matrix budget exceeded: {points} points > cap {cap}")]
    BudgetExceeded { points: usize, cap: usize },
    #[error("boundary-vanishing violated: outermost layer max {layer_max:.3e} exceeds {limit:.3e}")]
    BoundaryNotVanishing { layer_max: f64, limit: f64 },
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
    #[error("operator not Hermitian: residual {residual:.3e} > tol {tol:.3e}")]
    NotHermitian { residual: f64, tol: f64 },
    #[error("eigendecomposition failed, residual {residual:.3e}")]
    Eigen { residual: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty spectral window: {0}")]
    EmptyWindow(String),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("enlarge grid extent: {0}")]
    ActiveBoundary(String),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
