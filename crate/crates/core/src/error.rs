use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("dataset has no class labels; {0} requires labeled data")]
    Unlabeled(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Fewer modes than a weighted PCA can use. Callers sweeping a bandwidth
    /// ladder treat this as "skip this level".
    #[error("only {found} modes available, at least 3 are required")]
    TooFewModes { found: usize },

    #[error("matrix is not positive definite ({0}); covariance updates apply a ridge floor")]
    NotPositiveDefinite(&'static str),

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("EM degenerated: {0}")]
    Degenerate(String),

    #[error("log-likelihood decreased from {before} to {after} at iteration {iteration}")]
    LikelihoodDecrease {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error("every bandwidth level was skipped; widen the bandwidth grid or add levels")]
    AllLevelsSkipped,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
