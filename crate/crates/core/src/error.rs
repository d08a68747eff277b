//! Crate-wide error type.
//!
//! One enum covers the whole pipeline so that cross-fitting can propagate
//! nuisance-learner failures and the CLI can classify anything it receives
//! (user error vs. I/O vs. learner failure) without downcasting.

use thiserror::Error;

/// Anything that can go wrong across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    // --- data validation -------------------------------------------------
    #[error("treatment column contains {value} at row {row}; D must be exactly 0 or 1")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("non-finite value in {column} at row {row}")]
    NonFiniteEntry { column: String, row: usize },
    #[error("mediator is tagged binary but m[{row}] = {value}")]
    MediatorKindMismatch { row: usize, value: f64 },
    #[error("observation table is empty")]
    EmptyTable,
    #[error("column lengths disagree: {0}")]
    RaggedTable(String),
    #[error("missing required CSV column {name:?}")]
    MissingColumn { name: String },

    // --- effect arithmetic ----------------------------------------------
    #[error("phi({d},{d_prime}) missing or non-finite in effect-arithmetic input")]
    MissingPhi { d: u8, d_prime: u8 },

    // --- wavelet ----------------------------------------------------------
    #[error("cascade resolution {0} outside the supported range 4..=20")]
    ResolutionOutOfRange(u32),

    // --- synthetic scenarios ----------------------------------------------
    #[error("scenario needs at least {required} covariates, got p = {got}")]
    UnsupportedDimension { required: usize, got: usize },
    #[error("table/oracle mismatch: {0}")]
    ScenarioMismatch(String),

    // --- network training --------------------------------------------------
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    // --- nuisance learning ---------------------------------------------------
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("treatment arm {arm} has no rows in the training split")]
    InsufficientData { arm: u8 },
    #[error("non-finite prediction while fitting {target}")]
    PredictionNonFinite { target: String },

    // --- estimator --------------------------------------------------------
    #[error("row {row} is not covered by the nuisance fit")]
    UncoveredRow { row: usize },
    #[error("fold count {v} outside the supported range 2..=10")]
    FoldCountOutOfRange { v: usize },
    #[error("need n >= 2V rows for {v}-fold cross-fitting, got n = {n}")]
    TooFewRows { n: usize, v: usize },
    #[error("discrete law is invalid: {0}")]
    NonDiscreteLaw(String),

    // --- harness / configuration ------------------------------------------
    #[error("replicate {replicate} failed: {source}")]
    ReplicateFailed {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // --- I/O ----------------------------------------------------------------
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// The innermost error after unwrapping replicate wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::ReplicateFailed { source, .. } => source.root(),
            other => other,
        }
    }
}
