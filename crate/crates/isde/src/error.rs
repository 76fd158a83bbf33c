use crate::data::FeatureSubset;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by any operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },

    /// Row/column are 1-based in messages, matching how people read CSV files.
    #[error("non-numeric cell at row {row}, column {column}: {value:?}")]
    BadCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature index {index} out of range for d={d}")]
    IndexOutOfRange { index: usize, d: usize },

    #[error("split needs m + n <= N but m={m}, n={n}, N={n_rows}")]
    SplitTooLarge { m: usize, n: usize, n_rows: usize },

    #[error("score table is missing subset {0}")]
    MissingSubset(FeatureSubset),

    #[error("score table is incomplete for (d={d}, k={k}): has {have} of {want} subsets")]
    IncompleteTable {
        d: usize,
        k: usize,
        have: usize,
        want: usize,
    },

    #[error("enumeration guard exceeded: {count} partitions > limit {limit}")]
    GuardExceeded { count: String, limit: u64 },

    #[error("requested K={requested} exceeds the {available} partitions in Part_d^k")]
    KTooLarge { requested: usize, available: String },

    #[error("partitions have mismatched ground sets")]
    MismatchedGroundSets,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("model manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
