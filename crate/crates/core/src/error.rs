//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix shape mismatch in a linear-algebra or optimizer operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A caller violated an operation's contract (wrong popcount, non-scalar
    /// loss node, group sums off the simplex, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical routine failed (e.g. a Cholesky pivot went non-positive).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Cholesky factorization hit a non-positive pivot; the matrix is not
    /// positive definite. Carries the failing pivot index.
    #[error("matrix not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    /// Invalid configuration (bad architecture sizes, invalid method/space
    /// combinations, malformed plan).
    #[error("invalid config: {0}")]
    Config(String),

    /// Problems with dataset contents or schema.
    #[error("data error: {0}")]
    Data(String),

    /// Stratified splitting cannot satisfy its preconditions.
    #[error("stratification error: {0}")]
    Stratification(String),

    /// Training diverged (NaN/Inf loss). Carries the epoch or step index.
    #[error("training diverged at {unit} {index}: {message}")]
    Training {
        unit: &'static str,
        index: usize,
        message: String,
    },

    /// Relative regret is undefined because the full-data and random
    /// baselines coincide.
    #[error("relative regret undefined: A_F = A_R10 = {a_f}")]
    UndefinedRegret { a_f: f64, a_r10: f64 },

    /// The results store lacks the baseline runs needed for a regret context.
    #[error("missing baselines for ({dataset}, {classifier}): {detail}")]
    MissingBaseline {
        dataset: String,
        classifier: String,
        detail: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("plan parse error: {0}")]
    Toml(#[from] toml::de::Error),
}
