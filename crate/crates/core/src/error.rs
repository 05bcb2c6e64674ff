use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero variance and cannot be normalized")]
    ZeroVarianceColumn(usize),

    #[error("non-finite value in input")]
    NonFiniteInput,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),

    #[error("covariance matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error("coordinate descent did not converge within {max_iterations} sweeps")]
    NoConvergence {
        max_iterations: usize,
        last_iterate: DVector<f64>,
    },

    #[error("could not bracket the regularization constant after {0} doublings")]
    BracketingFailure(usize),

    #[error("every eigenvalue fell below the truncation threshold")]
    AllEigenvaluesTruncated,

    #[error("log-likelihood evaluated to a non-finite value")]
    NonFiniteLikelihood,

    #[error("empty lambda grid")]
    EmptyGrid,

    #[error("cannot split {n} samples into {folds} folds")]
    FoldTooSmall { n: usize, folds: usize },

    #[error("no experiment records")]
    EmptyRecords,

    #[error("number of sources {ell} must exceed the correlation dimension {d_corr}")]
    DimensionTooSmall { ell: usize, d_corr: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
