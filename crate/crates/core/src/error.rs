use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("non-numeric cell at row {row}, column '{column}': {value:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),

    #[error("no column named '{0}'")]
    UnknownColumn(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature index {index} out of range for {p} features")]
    FeatureOutOfRange { index: usize, p: usize },

    #[error("feature {0} is constant; a grid needs at least 2 distinct values")]
    ConstantFeature(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("predictor is not differentiable")]
    NotDifferentiable,

    #[error("empty neighborhood around {x_s:?} (epsilon = {epsilon})")]
    EmptyNeighborhood { x_s: Vec<f64>, epsilon: f64 },

    #[error("no grid point is estimable: {0}")]
    Inestimable(String),

    #[error("histograms have mismatched edges")]
    HistogramMismatch,

    #[error("dataset has no labels")]
    MissingLabels,

    #[error("label at row {row} is {value}, expected 0 or 1")]
    NonBinaryLabel { row: usize, value: f64 },

    #[error("model schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("curve is already centered")]
    AlreadyCentered,

    #[error("curves are not comparable: {0}")]
    CurveMismatch(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
