//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that must have full row rank does not (smallest singular
    /// value below `RANK_TOL` relative to the largest).
    #[error("rank-deficient matrix in {context}: sigma_min/sigma_max = {ratio:.3e}")]
    RankDeficient { context: &'static str, ratio: f64 },

    /// Incompatible or out-of-range dimensions.
    #[error("dimension error in {context}: {details}")]
    DimensionError {
        context: &'static str,
        details: String,
    },

    /// More combined receive antennas than transmit antennas.
    #[error("overloaded system: N = {n} < sum of user antennas = {sum_m}")]
    Overloaded { n: usize, sum_m: usize },

    /// A matrix inversion hit a (numerically) singular matrix.
    #[error("singular matrix in {0}")]
    Singular(&'static str),

    /// A matrix that is positive definite analytically failed its Cholesky
    /// factorization even after jitter; signals corrupted upstream data.
    #[error("numerical failure in {0}")]
    NumericalFailure(&'static str),

    /// Rate weights violate the simplex constraints.
    #[error("weight error: {0}")]
    WeightError(String),

    /// The inner solver hit its iteration cap; the best iterate is attached.
    #[error("inner solver reached the iteration cap ({iterations})")]
    MaxIterations {
        iterations: usize,
        best: Box<crate::sca::InnerSolution>,
    },

    /// The outer SCA loop hit its iteration cap; the history is attached.
    #[error("SCA reached the outer iteration cap ({iterations})")]
    MaxOuterIterations {
        iterations: usize,
        best: Box<crate::sca::ScaOutcome>,
    },

    /// Exhaustive permutation search requested for too many users.
    #[error("exhaustive permutation search limited to K <= 5, got K = {0}")]
    TooManyUsers(usize),

    /// Two successive-null-space bases do not share the same user order.
    #[error("user order mismatch between bases")]
    OrderMismatch,

    /// A two-user experiment was configured with K != 2.
    #[error("rate-region experiment requires K = 2, got K = {0}")]
    KNotTwo(usize),

    /// An experiment requires a channel model other than the configured one.
    #[error("channel model mismatch: {0}")]
    ModelMismatch(String),

    /// Invalid experiment configuration.
    #[error("invalid configuration: {0}")]
    Validation(String),

    /// Too many per-trial failures during a sweep.
    #[error("aborting sweep: {failed} of {total} trials failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
