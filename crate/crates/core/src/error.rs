use std::path::PathBuf;

use thiserror::Error;

use crate::panel::PairKey;

/// Errors produced anywhere in the estimation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("malformed row at line {line}, column `{column}`: {reason}")]
    MalformedRow {
        line: u64,
        column: String,
        reason: String,
    },
    #[error("duplicate observation for {reporter}->{partner} in {year} (line {line})")]
    DuplicatePairYear {
        reporter: String,
        partner: String,
        year: i32,
        line: u64,
    },
    #[error("no deflator available for year {0}")]
    MissingDeflator(i32),
    #[error("non-positive GDP at line {line}")]
    NonPositiveGdp { line: u64 },
    #[error("pair {0} has no positive-trade observation inside the pre-treatment window")]
    EmptyPretreatmentWindow(PairKey),
    #[error("sample filter removes every row")]
    EmptyResult,
    #[error("invalid sample filter: {0}")]
    InvalidFilter(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` has missing values on the selected rows")]
    MissingControl(String),
    #[error("too few rows: need {needed}, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("fold {fold} training complement lacks treatment class {missing} ({n_train} training rows)")]
    FoldMissingClass {
        fold: usize,
        missing: u8,
        n_train: usize,
    },
    #[error("propensity value {value} at row {row} lies outside [0, 1]")]
    PropensityOutOfRange { row: usize, value: f64 },
    #[error("treatment residuals show no variation")]
    NoTreatmentVariation,
    #[error("weights are all zero")]
    AllZeroWeights,
    #[error("{what} did not converge after {iterations} iterations (last change {last_delta:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_delta: f64,
    },
    #[error("regressor `{0}` is collinear with the other regressors or the absorbed fixed effects")]
    RankDeficient(String),
    #[error("need at least 2 clusters, have {0}")]
    TooFewClusters(usize),
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error("logistic regression did not converge (likely separation)")]
    LogitNonConvergence,
    #[error("event-time dummies collinear with the fixed effects: {0:?}")]
    CollinearEventDummies(Vec<i32>),
    #[error("no pre-treatment rows available for placebo year {0}")]
    NoPreTreatmentRows(i32),
    #[error("controlled and uncontrolled R-squared coincide")]
    DegenerateR2,
    #[error("period {lo}-{hi} has too few rows ({n})")]
    PeriodTooSmall { lo: i32, hi: i32, n: usize },
    #[error("entity `{entity}` has no observation in base year {year}")]
    MissingBaseYear { entity: String, year: i32 },
    #[error("invalid data-generating spec: {0}")]
    InvalidSpec(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by estimation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::BadHeader(_)
                | Error::MalformedRow { .. }
                | Error::DuplicatePairYear { .. }
                | Error::MissingDeflator(_)
                | Error::NonPositiveGdp { .. }
                | Error::EmptyPretreatmentWindow(_)
                | Error::EmptyResult
                | Error::InvalidFilter(_)
                | Error::UnknownColumn(_)
                | Error::MissingControl(_)
                | Error::Json(_)
        )
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
            Error::BadHeader(_) => "BadHeader",
            Error::MalformedRow { .. } => "MalformedRow",
            Error::DuplicatePairYear { .. } => "DuplicatePairYear",
            Error::MissingDeflator(_) => "MissingDeflator",
            Error::NonPositiveGdp { .. } => "NonPositiveGdp",
            Error::EmptyPretreatmentWindow(_) => "EmptyPretreatmentWindow",
            Error::EmptyResult => "EmptyResult",
            Error::InvalidFilter(_) => "InvalidFilter",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::MissingControl(_) => "MissingControl",
            Error::TooFewRows { .. } => "TooFewRows",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::FoldMissingClass { .. } => "FoldMissingClass",
            Error::PropensityOutOfRange { .. } => "PropensityOutOfRange",
            Error::NoTreatmentVariation => "NoTreatmentVariation",
            Error::AllZeroWeights => "AllZeroWeights",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::RankDeficient(_) => "RankDeficient",
            Error::TooFewClusters(_) => "TooFewClusters",
            Error::EmptyGroup(_) => "EmptyGroup",
            Error::LogitNonConvergence => "LogitNonConvergence",
            Error::CollinearEventDummies(_) => "CollinearEventDummies",
            Error::NoPreTreatmentRows(_) => "NoPreTreatmentRows",
            Error::DegenerateR2 => "DegenerateR2",
            Error::PeriodTooSmall { .. } => "PeriodTooSmall",
            Error::MissingBaseYear { .. } => "MissingBaseYear",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Json(_) => "Json",
        }
    }
}
