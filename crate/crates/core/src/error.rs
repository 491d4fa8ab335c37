use std::path::PathBuf;

/// Errors raised by the selection engine and its data plumbing.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("column `{0}` appears more than once in header")]
    AmbiguousColumn(String),

    #[error("row {row}: response `{value}` is not 0 or 1")]
    NonBinaryResponse { row: usize, value: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("group level `{0}` has no rows")]
    EmptyGroupLevel(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (leading minor {minor} failed)")]
    NotPositiveDefinite { minor: usize },

    #[error("singular design X_gamma'X_gamma for selected columns {columns:?}")]
    SingularDesign { columns: Vec<usize> },

    #[error("non-finite linear predictor at row {row}")]
    NonFiniteMean { row: usize },

    #[error("inverse-Wishart degrees of freedom {dof} too small for dimension {dim}")]
    DegreesOfFreedom { dof: f64, dim: usize },

    #[error("split: {0}")]
    Split(String),

    #[error("feature `{0}` is not part of the model")]
    UnknownFeature(String),

    #[error("feature `{0}` is missing from the input")]
    MissingFeature(String),

    #[error("unsupported file format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
