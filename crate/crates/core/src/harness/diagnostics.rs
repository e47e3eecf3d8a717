//! Heavy-tail and meeting-time diagnostics.
//!
//! These support judgement calls rather than hard assertions: estimator
//! variance and cost are finite under the theory's assumptions, and these
//! summaries are how a run shows whether it is behaving accordingly.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Central fourth moment. Stability of this statistic across growing sample
/// sizes is the working check that fourth moments exist.
pub fn fourth_moment(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n
}

/// Hill estimator of the tail index of |values| using the k largest
/// magnitudes. Larger is lighter; an index comfortably above 2 is consistent
/// with finite variance.
pub fn hill_tail_index(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k + 1 > values.len() {
        return Err(Error::InvalidParam {
            name: "k",
            message: format!(
                "tail sample size must satisfy 1 <= k < n = {}, got {k}",
                values.len()
            ),
        });
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let pivot = mags[k];
    if !(pivot > 0.0) {
        return Err(Error::InvalidParam {
            name: "k",
            message: "the (k+1)-th largest magnitude must be positive".into(),
        });
    }
    let log_excess: f64 = mags[..k].iter().map(|m| (m / pivot).ln()).sum();
    Ok(k as f64 / log_excess)
}

/// Exact meeting-time counts as sorted (tau, count) pairs.
pub fn meeting_time_histogram(taus: &[u64]) -> Vec<(u64, u64)> {
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    for &tau in taus {
        *counts.entry(tau).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

/// Running sample variance recorded at `checkpoints` evenly spaced prefix
/// sizes. A stabilizing sequence indicates no heavy-tail blow-up.
pub fn running_variance(values: &[f64], checkpoints: usize) -> Vec<(usize, f64)> {
    if values.len() < 2 || checkpoints == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(checkpoints);
    for j in 1..=checkpoints {
        let len = (values.len() * j) / checkpoints;
        if len < 2 {
            continue;
        }
        let slice = &values[..len];
        let mean = slice.iter().sum::<f64>() / len as f64;
        let var =
            slice.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len as f64 - 1.0);
        out.push((len, var));
    }
    out.dedup_by_key(|e| e.0);
    out
}
