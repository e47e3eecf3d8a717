//! Replication engine and statistical aggregation.
//!
//! A job maps a dedicated RNG stream to one replication. The engine assigns
//! stream ids 0..R-1 in replication order, fans the work out over a thread
//! pool, and reduces the ordered results sequentially, so every report is a
//! pure function of (job, R, seed) and in particular independent of the
//! thread count. Failed replications are excluded from the moments but
//! counted by error reason; unbiasedness holds only conditionally on no
//! truncation, so high failure rates are flagged loudly rather than hidden.

pub mod compare;
pub mod diagnostics;
pub mod report;

pub use compare::{compare_equal_compute, CurvePoint, EqualComputeCurves, ProcessorCurve};
pub use report::{run_replications, AggregateReport};

/// One completed replication: the scalar estimate, its integer cost in
/// kernel-step units, and the meeting time when the job exposes one.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub value: f64,
    pub cost: u64,
    pub tau: Option<u64>,
}
