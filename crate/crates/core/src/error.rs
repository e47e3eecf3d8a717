//! Error taxonomy shared across the estimation pipeline.
//!
//! Replication-level failures (meeting caps, level caps, domain violations) are
//! ordinary values here so the harness can count them per reason instead of
//! averaging broken replications into a report.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its admissible range.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParam { name: &'static str, message: String },

    /// Vector lengths disagree (state vs kernel dimension, g arity vs
    /// subroutine output, sample batch size vs level).
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A transition-matrix row is not a probability vector.
    #[error("transition matrix row {row} is not a probability vector")]
    NonStochasticRow { row: usize },

    /// The log target came back NaN/+inf, or -inf at the chain's current
    /// position; the chain has no valid move from here.
    #[error("non-finite log target at the current state")]
    NonFiniteLogTarget,

    /// The coupled pair failed to meet within the configured step cap.
    #[error("coupled chains did not meet within {cap} steps")]
    MeetingCapExceeded { cap: u64 },

    /// The geometric level draw exceeded the cap; occurs with probability
    /// (1-p)^max_level per estimate and is counted, never silently truncated.
    #[error("level {level} exceeds max_level {max_level}")]
    LevelCapExceeded { level: u32, max_level: u32 },

    /// g was asked to evaluate a point outside its domain.
    #[error("point outside the domain of {label}: {point:?}")]
    OutsideDomain { label: String, point: Vec<f64> },

    /// An estimate came back NaN or infinite.
    #[error("non-finite estimate value")]
    NonFiniteValue,

    /// A model-level guard tripped (e.g. exp overflow for a statistic).
    #[error("{0}")]
    Model(String),

    /// A data file violated the documented record format.
    #[error("malformed data (line {line}): {message}")]
    Data { line: usize, message: String },

    /// More than half of the replications in a run failed.
    #[error("{failed} of {total} replications failed; report withheld")]
    TooManyFailures { failed: u64, total: u64 },

    /// An inner (conditional) estimate failed; carries the outer draw that
    /// conditioned it.
    #[error("inner estimate failed at outer draw {outer}: {source}")]
    NestedContext {
        outer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short tag for per-reason failure counts in reports.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::InvalidParam { .. } => "invalid_param",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonStochasticRow { .. } => "non_stochastic_row",
            Error::NonFiniteLogTarget => "non_finite_log_target",
            Error::MeetingCapExceeded { .. } => "meeting_cap",
            Error::LevelCapExceeded { .. } => "level_cap",
            Error::OutsideDomain { .. } => "outside_domain",
            Error::NonFiniteValue => "non_finite_value",
            Error::Model(_) => "model",
            Error::Data { .. } => "data",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::NestedContext { source, .. } => source.reason(),
            Error::Io(_) => "io",
        }
    }
}
