use std::path::PathBuf;

use thiserror::Error;

use crate::data::Origin;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric feature `{value}` in row {row}, column `{column}`")]
    NonNumericFeature {
        row: usize,
        column: String,
        value: String,
    },
    #[error("label column must hold at most two distinct values, found {0:?}")]
    TooManyLabels(Vec<String>),
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("unknown origin tag `{value}` in row {row} (expected Q, P or P<k>)")]
    BadOrigin { row: usize, value: String },
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature {coord} of sample {index} is {value}, outside [0,1]")]
    FeatureOutOfRange {
        index: usize,
        coord: usize,
        value: f64,
    },
    #[error("split rule uses feature {index} but data has dimension {dim}")]
    RuleIndexOutOfRange { index: usize, dim: usize },
    #[error("invalid split rule: {0}")]
    InvalidRule(String),
    #[error("requested {requested} samples of origin {origin} but only {available} available")]
    InsufficientSamples {
        origin: Origin,
        requested: usize,
        available: usize,
    },
    #[error("level {level} out of range (max {max})")]
    LevelOutOfRange { level: u32, max: u32 },
    #[error("invalid cell id: {0}")]
    InvalidCell(String),
    #[error("total sample count is zero")]
    ZeroSamples,
    #[error("origin {origin} has {available} samples, fewer than {folds} folds")]
    TooFewForFolds {
        origin: Origin,
        available: usize,
        folds: usize,
    },
    #[error("importance-weighted cross-validation needs a density ratio estimate")]
    MissingRatio,
    #[error("hold-out fold {0} contains no target samples")]
    EmptyTargetHoldout(usize),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("codelengths violate the Kraft inequality (sum {0})")]
    KraftViolation(f64),
    #[error("sample size must be positive")]
    NonPositiveN,
    #[error("target sample is empty")]
    EmptyTarget,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("cell has positive target mass but zero source mass")]
    ZeroSourceMass,
    #[error("no occupied target cells")]
    NoOccupiedCells,
    #[error("slope fit needs at least 3 points with positive values: {0}")]
    BadCurve(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
