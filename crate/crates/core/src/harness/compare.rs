//! Equal-compute comparison between the unbiased estimator and a plug-in
//! (single long chain) estimator.
//!
//! Simulated processor counts stand in for parallel machines: c processors
//! average c independent estimates. Both estimators see the same compute.
//! The unbiased side runs first and records per-replication costs; plug-in
//! replication i then receives exactly the cost budget of unbiased
//! replication i, in deterministic kernel-step units rather than wall-clock
//! time. The reported relative error is sqrt(E[(X - truth)^2]) / |truth|,
//! estimated by averaging consecutive estimates into groups of size c.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::Replication;
use crate::rng::RngStream;

/// Group count at the largest processor count; smaller counts reuse the same
/// pool, so their error estimates only get tighter.
const GROUPS_AT_MAX: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub processors: u64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessorCurve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualComputeCurves {
    pub unbiased: ProcessorCurve,
    pub plugin: ProcessorCurve,
}

impl EqualComputeCurves {
    /// CSV with one row per (estimator, processor count).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,processors,relative_error\n");
        for curve in [&self.unbiased, &self.plugin] {
            for point in &curve.points {
                out.push_str(&format!(
                    "{},{},{}\n",
                    curve.label, point.processors, point.relative_error
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Model(format!("curve serialization failed: {e}")))
    }
}

fn relative_rmse(pool: &[f64], c: u64, truth: f64) -> f64 {
    let c = c as usize;
    let groups = pool.len() / c;
    let mut acc = 0.0;
    for g in 0..groups {
        let mean = pool[g * c..(g + 1) * c].iter().sum::<f64>() / c as f64;
        acc += (mean - truth).powi(2);
    }
    (acc / groups as f64).sqrt() / truth.abs()
}

/// Runs `GROUPS_AT_MAX * max(processor_counts)` replications of each
/// estimator and reports both relative-error curves. The unbiased job uses
/// streams 0.., the plug-in job streams pool_size.., so the two sides are
/// independent. Any replication error aborts the comparison: a curve built
/// on partially failed pools would not be an equal-compute statement.
pub fn compare_equal_compute<U, P>(
    unbiased_job: &U,
    plugin_job: &P,
    truth: f64,
    processor_counts: &[u64],
    seed: u64,
) -> Result<EqualComputeCurves>
where
    U: Fn(&mut RngStream) -> Result<Replication>,
    P: Fn(u64, &mut RngStream) -> Result<f64>,
{
    if !(truth.is_finite() && truth != 0.0) {
        return Err(Error::InvalidParam {
            name: "truth",
            message: format!("relative error needs a finite nonzero truth, got {truth}"),
        });
    }
    if processor_counts.is_empty() {
        return Err(Error::InvalidParam {
            name: "processor_counts",
            message: "at least one processor count is required".into(),
        });
    }
    if processor_counts[0] == 0 || processor_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParam {
            name: "processor_counts",
            message: "processor counts must be positive and strictly increasing".into(),
        });
    }

    let max_c = *processor_counts.last().unwrap();
    let pool_size = GROUPS_AT_MAX * max_c;

    let mut unbiased_values = Vec::with_capacity(pool_size as usize);
    let mut budgets = Vec::with_capacity(pool_size as usize);
    for i in 0..pool_size {
        let mut rng = RngStream::new(seed, i);
        let rep = unbiased_job(&mut rng)?;
        unbiased_values.push(rep.value);
        budgets.push(rep.cost);
    }

    let mut plugin_values = Vec::with_capacity(pool_size as usize);
    for i in 0..pool_size {
        let mut rng = RngStream::new(seed, pool_size + i);
        plugin_values.push(plugin_job(budgets[i as usize], &mut rng)?);
    }

    let curve = |label: &str, pool: &[f64]| ProcessorCurve {
        label: label.to_string(),
        points: processor_counts
            .iter()
            .map(|&c| CurvePoint {
                processors: c,
                relative_error: relative_rmse(pool, c, truth),
            })
            .collect(),
    };
    Ok(EqualComputeCurves {
        unbiased: curve("unbiased", &unbiased_values),
        plugin: curve("plugin", &plugin_values),
    })
}
