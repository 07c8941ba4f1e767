//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by distribution kernels, the fitter, and post-fit inference.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A matrix that must be symmetric positive definite failed its Cholesky
    /// factorization (after the standard jitter attempt).
    #[error("covariance not positive definite: {context}")]
    NotPositiveDefinite { context: String },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The positive orthant carries essentially no probability mass, so
    /// truncated moments cannot be computed reliably.
    #[error("truncation region has negligible probability")]
    NegligibleTruncationMass,

    /// Second moment of a truncated t requested with nu <= 2.
    #[error("second moment undefined for degrees of freedom {nu} <= 2")]
    SecondMomentUndefined { nu: f64 },

    #[error("unsupported skewness rank {0} (supported: r <= 4)")]
    UnsupportedRank(usize),

    #[error("degenerate transform: matrix does not have full row rank")]
    DegenerateTransform,

    #[error("rank-deficient fixed-effects design")]
    RankDeficientDesign,

    #[error("skewness update degenerate: linear system is singular")]
    SkewUpdateDegenerate,

    /// Fewer than the minimum number of accepted draws in the rejection oracle.
    #[error("insufficient acceptance: only {accepted} of {total} draws fell in the region")]
    InsufficientAcceptance { accepted: usize, total: usize },

    #[error("Hessian not negative definite")]
    HessianNotNegativeDefinite,

    /// The observed log-likelihood became non-finite during the ECME loop.
    /// Carries the iteration at which the failure occurred; the caller keeps
    /// the last valid estimate.
    #[error("non-finite log-likelihood at iteration {iteration}: {context}")]
    NonFiniteLikelihood { iteration: usize, context: String },

    /// An error attributed to a specific subject (E-step, marginal density).
    #[error("subject {subject}: {source}")]
    Subject {
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub(crate) fn for_subject(self, id: &str) -> Error {
        Error::Subject {
            subject: id.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
