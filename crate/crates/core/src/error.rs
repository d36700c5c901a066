use thiserror::Error;

/// Errors raised by the estimation, prediction and data-pipeline routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeError {
    #[error("correlation matrix is not positive definite: {0}")]
    SingularCorrelation(String),
    #[error("duplicate sites without a nugget (tau = 0) make the correlation matrix singular")]
    DuplicateSites,
    #[error("rank deficiency: {0}")]
    RankDeficiency(String),
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("singular information matrix: {0}")]
    SingularInformation(String),
    #[error("optimizer failed: {0}")]
    OptimFailure(String),
    #[error("dimension mismatch: {0}")]
    DimensionError(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("column {column} has values needing replacement but no detection threshold")]
    MissingThreshold { column: String },
    #[error("component {column} is not strictly positive in row {row}")]
    NonpositiveComponent { row: usize, column: String },
    #[error("value {0} outside the open interval (0, 1e6)")]
    OutOfRange(f64),
    #[error("fold {fold}: {source}")]
    FoldFailure {
        fold: usize,
        #[source]
        source: Box<SpeError>,
    },
    #[error("every candidate dimension failed to fit: {0}")]
    AllFitsFailed(String),
    #[error("{failed} of {total} replicates failed, above the 5% abort threshold")]
    TooManyFailures { failed: usize, total: usize },
}

impl SpeError {
    /// Stable machine-readable name of the error kind.
    pub fn name(&self) -> &'static str {
        match self {
            SpeError::SingularCorrelation(_) => "SingularCorrelation",
            SpeError::DuplicateSites => "DuplicateSites",
            SpeError::RankDeficiency(_) => "RankDeficiency",
            SpeError::SingularCovariance(_) => "SingularCovariance",
            SpeError::SingularInformation(_) => "SingularInformation",
            SpeError::OptimFailure(_) => "OptimFailure",
            SpeError::DimensionError(_) => "DimensionError",
            SpeError::InvalidParameter(_) => "InvalidParameter",
            SpeError::MissingThreshold { .. } => "MissingThreshold",
            SpeError::NonpositiveComponent { .. } => "NonpositiveComponent",
            SpeError::OutOfRange(_) => "OutOfRange",
            SpeError::FoldFailure { .. } => "FoldFailure",
            SpeError::AllFitsFailed(_) => "AllFitsFailed",
            SpeError::TooManyFailures { .. } => "TooManyFailures",
        }
    }
}

pub type Result<T> = std::result::Result<T, SpeError>;
