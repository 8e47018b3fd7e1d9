//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by model construction, fitting, resampling, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{name}` not found in the data table")]
    MissingColumn { name: String },

    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("fixed-effects design is rank deficient (rank {rank} < {p} columns)")]
    RankDeficientDesign { rank: usize, p: usize },

    #[error("cluster `{cluster_id}` has no rows")]
    EmptyCluster { cluster_id: String },

    #[error("grouping column has {found} distinct level(s); at least 2 are required")]
    TooFewClusters { found: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("model has {n} observations but needs more than p + 1 = {min}")]
    TooFewObservations { n: usize, min: usize },

    #[error("objective is not finite at the requested point")]
    NonFiniteObjective,

    #[error("cluster `{cluster_id}` has a rank-deficient random-effects design")]
    SingularClusterDesign { cluster_id: String },

    #[error("empirical covariance of the predicted random effects is singular")]
    SingularEmpiricalCovariance,

    #[error("estimated random-effects covariance is singular beyond its zero rows")]
    DegenerateTarget,

    #[error("bootstrap covariance of the log variance components is singular")]
    SingularBootstrapCovariance,

    #[error("variance-component replicate in column `{column}` is not positive")]
    NonPositiveVarianceComponent { column: String },

    #[error("replicate mean of variance component `{column}` is zero; ratio correction undefined")]
    ZeroReplicateMean { column: String },

    #[error("leverage of row {row} is 1; wild transform undefined")]
    LeverageOne { row: usize },

    #[error("need at least {needed} usable replicates, found {found}")]
    InsufficientReplicates { needed: usize, found: usize },

    #[error("unknown interval type `{name}` (expected norm, basic, or perc)")]
    UnknownIntervalType { name: String },

    #[error("bootstrap results cannot be combined: {reason}")]
    IncompatibleResults { reason: String },

    #[error("statistic requires a random-intercept-only model (q = 1)")]
    NotRandomInterceptModel,

    #[error("formula syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("formula contains more than one random-effects group clause")]
    MultipleGroupClauses,

    #[error("invalid model term: {message}")]
    InvalidTerm { message: String },

    #[error("invalid bootstrap configuration: {message}")]
    Config { message: String },

    #[error("statistic evaluation failed: {message}")]
    Statistic { message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to: 2 for I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Csv(_) => 2,
            _ => 1,
        }
    }
}
