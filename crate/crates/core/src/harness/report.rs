//! Replication runner and the aggregate statistics report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::Replication;
use crate::rng::RngStream;

/// Aggregate over the completed replications of one run. The confidence
/// interval is the CLT interval mean +- 1.96 * std_error; the
/// work-normalized variance multiplies the sample variance by the mean cost
/// per estimate, making estimators with different per-draw costs comparable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub requested: u64,
    pub completed: u64,
    pub failed: u64,
    /// Failure counts keyed by stable error-reason tags.
    pub error_reasons: BTreeMap<String, u64>,
    pub mean: f64,
    /// Unbiased sample variance (n - 1 denominator).
    pub variance: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub total_cost: u64,
    pub work_normalized_variance: f64,
    pub truth: Option<f64>,
    /// |mean - truth| / |truth| when a nonzero truth is supplied.
    pub relative_error: Option<f64>,
    /// Set when more than 1% of replications failed.
    pub warning: Option<String>,
}

const CI_MULTIPLIER: f64 = 1.96;
const WARN_FAILURE_FRACTION: f64 = 0.01;

/// Runs replication index i on stream id i and returns the results in index
/// order. `threads = 1` stays on the calling thread; larger counts use a
/// dedicated pool. Ordering, and therefore every downstream float, is the
/// same either way.
pub fn run_collect<J>(
    job: &J,
    r: u64,
    threads: usize,
    seed: u64,
) -> Result<Vec<Result<Replication>>>
where
    J: Fn(&mut RngStream) -> Result<Replication> + Send + Sync,
{
    if threads == 0 {
        return Err(Error::InvalidParam {
            name: "threads",
            message: "worker count must be at least 1".into(),
        });
    }
    let run_one = |i: u64| {
        let mut rng = RngStream::new(seed, i);
        job(&mut rng)
    };
    if threads == 1 {
        Ok((0..r).map(run_one).collect())
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Model(format!("thread pool construction failed: {e}")))?;
        Ok(pool.install(|| (0..r).into_par_iter().map(run_one).collect()))
    }
}

/// Executes R replications on streams 0..R-1 and aggregates them. Errors are
/// tallied per reason; the report is withheld only when more than half the
/// replications fail (or too few complete to form a variance).
pub fn run_replications<J>(
    job: &J,
    r: u64,
    threads: usize,
    seed: u64,
    truth: Option<f64>,
) -> Result<AggregateReport>
where
    J: Fn(&mut RngStream) -> Result<Replication> + Send + Sync,
{
    if r < 2 {
        return Err(Error::InvalidParam {
            name: "r",
            message: format!("at least 2 replications are required, got {r}"),
        });
    }
    let outcomes = run_collect(job, r, threads, seed)?;

    let mut completed: Vec<Replication> = Vec::with_capacity(outcomes.len());
    let mut error_reasons: BTreeMap<String, u64> = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            Ok(rep) => completed.push(rep),
            Err(e) => *error_reasons.entry(e.reason().to_string()).or_insert(0) += 1,
        }
    }
    let failed = r - completed.len() as u64;
    // The two-point minimum keeps the variance defined.
    if failed * 2 > r || completed.len() < 2 {
        return Err(Error::TooManyFailures { failed, total: r });
    }

    let n = completed.len() as f64;
    let mean = completed.iter().map(|rep| rep.value).sum::<f64>() / n;
    // Two-pass variance: numerically stable and independent of thread count
    // because the completed list is in replication order.
    let variance = completed
        .iter()
        .map(|rep| (rep.value - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let std_error = (variance / n).sqrt();
    let total_cost: u64 = completed.iter().map(|rep| rep.cost).sum();
    let mean_cost = total_cost as f64 / n;

    let relative_error = match truth {
        Some(t) if t != 0.0 => Some((mean - t).abs() / t.abs()),
        _ => None,
    };
    let warning = if failed > 0 && (failed as f64 / r as f64) > WARN_FAILURE_FRACTION {
        let msg = format!(
            "{failed} of {r} replications failed; the aggregate is conditional on completion and may be biased"
        );
        eprintln!("warning: {msg}");
        Some(msg)
    } else {
        None
    };

    Ok(AggregateReport {
        requested: r,
        completed: completed.len() as u64,
        failed,
        error_reasons,
        mean,
        variance,
        std_error,
        ci_low: mean - CI_MULTIPLIER * std_error,
        ci_high: mean + CI_MULTIPLIER * std_error,
        total_cost,
        work_normalized_variance: variance * mean_cost,
        truth,
        relative_error,
        warning,
    })
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AggregateReport {
    /// Two-line CSV: header plus one data row. Error reasons are packed as
    /// `reason:count` pairs joined by `;` so the row stays flat.
    pub fn to_csv(&self) -> String {
        let reasons = self
            .error_reasons
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect::<Vec<_>>()
            .join(";");
        let warning = self.warning.as_deref().unwrap_or("").replace(',', ";");
        let mut out = String::from(
            "requested,completed,failed,mean,variance,std_error,ci_low,ci_high,total_cost,work_normalized_variance,truth,relative_error,error_reasons,warning\n",
        );
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.requested,
            self.completed,
            self.failed,
            self.mean,
            self.variance,
            self.std_error,
            self.ci_low,
            self.ci_high,
            self.total_cost,
            self.work_normalized_variance,
            csv_opt(self.truth),
            csv_opt(self.relative_error),
            reasons,
            warning,
        ));
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Model(format!("report serialization failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_job(rng: &mut RngStream) -> Result<Replication> {
        let _ = rng.uniform();
        Ok(Replication { value: 7.0, cost: 3, tau: None })
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(matches!(
            run_replications(&constant_job, 1, 1, 0, None).unwrap_err(),
            Error::InvalidParam { name: "r", .. }
        ));
        assert!(matches!(
            run_replications(&constant_job, 10, 0, 0, None).unwrap_err(),
            Error::InvalidParam { name: "threads", .. }
        ));
    }

    #[test]
    fn constant_job_yields_degenerate_interval() {
        let report = run_replications(&constant_job, 100, 1, 5, None).unwrap();
        assert_eq!(report.completed, 100);
        assert_eq!(report.mean, 7.0);
        assert_eq!(report.variance, 0.0);
        assert_eq!((report.ci_low, report.ci_high), (7.0, 7.0));
        assert_eq!(report.total_cost, 300);
        assert_eq!(report.work_normalized_variance, 0.0);
        assert!(report.warning.is_none());
    }

    #[test]
    fn reports_are_thread_count_independent() {
        let job = |rng: &mut RngStream| {
            let mut v = 0.0;
            for _ in 0..50 {
                v += rng.standard_normal();
            }
            Ok(Replication { value: v, cost: 50, tau: Some(7) })
        };
        let a = run_replications(&job, 500, 1, 42, Some(0.0)).unwrap();
        let b = run_replications(&job, 500, 8, 42, Some(0.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn ci_covers_a_standard_normal_mean() {
        let job = |rng: &mut RngStream| {
            Ok(Replication { value: rng.standard_normal(), cost: 1, tau: None })
        };
        let report = run_replications(&job, 100_000, 1, 9, Some(0.0)).unwrap();
        assert!(report.ci_low < 0.0 && 0.0 < report.ci_high);
        assert!((report.variance - 1.0).abs() < 0.03);
        // truth = 0 leaves the relative error undefined.
        assert!(report.relative_error.is_none());
    }

    #[test]
    fn relative_error_matches_definition() {
        let report = run_replications(&constant_job, 50, 1, 1, Some(8.0)).unwrap();
        assert!((report.relative_error.unwrap() - 1.0 / 8.0).abs() < 1e-15);
        assert_eq!(report.truth, Some(8.0));
    }

    #[test]
    fn failures_are_counted_by_reason() {
        // The first uniform decides the fate, so the failure set is a fixed
        // function of the seed and can be recomputed exactly.
        let job = |rng: &mut RngStream| {
            if rng.uniform() < 0.2 {
                Err(Error::MeetingCapExceeded { cap: 10 })
            } else {
                Ok(Replication { value: 1.0, cost: 1, tau: None })
            }
        };
        let r = 2000;
        let report = run_replications(&job, r, 1, 77, None).unwrap();
        let mut expected_failures = 0;
        for i in 0..r {
            if RngStream::new(77, i).uniform() < 0.2 {
                expected_failures += 1;
            }
        }
        assert_eq!(report.failed, expected_failures);
        assert_eq!(report.error_reasons["meeting_cap"], expected_failures);
        assert!(report.warning.is_some());
        assert_eq!(report.completed + report.failed, r);
    }

    #[test]
    fn majority_failure_withholds_the_report() {
        let job = |rng: &mut RngStream| {
            if rng.uniform() < 0.9 {
                Err(Error::NonFiniteValue)
            } else {
                Ok(Replication { value: 1.0, cost: 1, tau: None })
            }
        };
        let err = run_replications(&job, 400, 1, 3, None).unwrap_err();
        assert!(matches!(err, Error::TooManyFailures { .. }));
    }

    #[test]
    fn csv_has_header_and_one_row() {
        let report = run_replications(&constant_job, 10, 1, 0, Some(7.0)).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0].split(',').count(),
            lines[1].split(',').count(),
            "header and row field counts differ"
        );
        assert!(lines[1].starts_with("10,10,0,7,0,0,7,7,30,0,7,0,"));
    }
}
