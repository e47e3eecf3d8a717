//! Two-stage count model with blocked feedback and its nested utility target.
//!
//! Stage one observes binomial counts `z of n` per group, giving independent
//! Beta(1 + z, 1 + n - z) posteriors for the group-level exposure rates
//! theta_1. Stage two is a Poisson regression on those rates: group d has
//! log-rate `lambda_d = theta_{2,1} + theta_{1,d} * theta_{2,2} + x2_d` and
//! observed count `x1_d`, with an independent N(0, prior_variance) prior on
//! each theta_2 component. Feedback is blocked: theta_1 is drawn from its
//! stage-one posterior alone, and theta_2 is sampled conditionally on that
//! draw. The estimation target is the expected maximum of the conditional
//! posterior means of the log-rates,
//! `U = E_{theta_1}[ max_d E_{theta_2 | theta_1}[lambda_d] ]`,
//! a nested expectation: the inner mean is only reachable by MCMC, so the
//! inner stage runs a coupled-chain estimator over a random-walk MH kernel
//! whose proposal scale is tuned per outer draw by a short pilot.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::joa::{JoaConfig, JoaParams};
use crate::kernels::rwmh::LogTarget;
use crate::kernels::{MarkovKernel, RwMhKernel};
use crate::mlmc::{GFunction, MlmcConfig};
use crate::nested::{InnerProblem, NestedSpec};
use crate::rng::RngStream;

/// One group's record: stage-one counts `z` successes of `n` trials, and the
/// stage-two outcome count `x1` with its integer log-rate offset `x2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutRow {
    pub z: u64,
    pub n: u64,
    pub x1: u64,
    pub x2: u64,
}

/// The full dataset plus the stage-two prior variance. Files carry exactly
/// [`CutModelData::FILE_ROWS`] records; programmatic construction accepts any
/// positive number of groups so reduced designs stay testable.
#[derive(Debug, Clone, PartialEq)]
pub struct CutModelData {
    pub rows: Vec<CutRow>,
    /// Variance of the independent centred Gaussian prior on each theta_2
    /// component.
    pub prior_variance: f64,
}

impl CutModelData {
    /// Record count required of data files.
    pub const FILE_ROWS: usize = 13;

    const DEFAULT_PRIOR_VARIANCE: f64 = 1000.0;

    /// Accepts any positive number of groups; every row must satisfy z <= n.
    pub fn from_rows(rows: Vec<CutRow>) -> Result<Self> {
        let data = CutModelData {
            rows,
            prior_variance: Self::DEFAULT_PRIOR_VARIANCE,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidParam {
                name: "rows",
                message: "at least one group is required".into(),
            });
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.z > row.n {
                return Err(Error::InvalidParam {
                    name: "rows",
                    message: format!("record {i}: z = {} exceeds n = {}", row.z, row.n),
                });
            }
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(Error::InvalidParam {
                name: "prior_variance",
                message: format!("must be positive and finite, got {}", self.prior_variance),
            });
        }
        Ok(())
    }

    /// Loads a plain-text data file: one record per line as four integers
    /// "Z N X1 X2", exactly [`Self::FILE_ROWS`] records. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Data {
                    line: line_no,
                    message: format!("expected 4 integers \"Z N X1 X2\", got {} fields", fields.len()),
                });
            }
            let mut vals = [0u64; 4];
            for (slot, field) in vals.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|_| Error::Data {
                    line: line_no,
                    message: format!("`{field}` is not a nonnegative integer"),
                })?;
            }
            if vals[0] > vals[1] {
                return Err(Error::Data {
                    line: line_no,
                    message: format!("z = {} exceeds n = {}", vals[0], vals[1]),
                });
            }
            rows.push(CutRow {
                z: vals[0],
                n: vals[1],
                x1: vals[2],
                x2: vals[3],
            });
        }
        if rows.len() != Self::FILE_ROWS {
            return Err(Error::Data {
                line: text.lines().count(),
                message: format!("expected exactly {} records, got {}", Self::FILE_ROWS, rows.len()),
            });
        }
        Self::from_rows(rows)
    }

    /// Synthetic stand-in dataset, not real study data. Generated from the
    /// known point theta_2 = (0.5, 1.0): per group, z/n was fixed near a
    /// chosen rate q, the offset x2 cycles through 0..=3, and x1 is
    /// round(exp(0.5 + q + x2)).
    pub fn synthetic_default() -> Self {
        let rows = vec![
            CutRow { z: 57, n: 947, x1: 2, x2: 0 },
            CutRow { z: 118, n: 1313, x1: 5, x2: 1 },
            CutRow { z: 106, n: 885, x1: 14, x2: 2 },
            CutRow { z: 228, n: 1522, x1: 38, x2: 3 },
            CutRow { z: 138, n: 768, x1: 2, x2: 0 },
            CutRow { z: 233, n: 1108, x1: 6, x2: 1 },
            CutRow { z: 345, n: 1439, x1: 15, x2: 2 },
            CutRow { z: 253, n: 936, x1: 43, x2: 3 },
            CutRow { z: 170, n: 1702, x1: 2, x2: 0 },
            CutRow { z: 106, n: 814, x1: 5, x2: 1 },
            CutRow { z: 200, n: 1249, x1: 14, x2: 2 },
            CutRow { z: 201, n: 1056, x1: 40, x2: 3 },
            CutRow { z: 357, n: 1621, x1: 2, x2: 0 },
        ];
        CutModelData {
            rows,
            prior_variance: Self::DEFAULT_PRIOR_VARIANCE,
        }
    }

    /// Number of groups D.
    pub fn dim(&self) -> usize {
        self.rows.len()
    }
}

/// The log-rate vector: lambda_d = theta2[0] + theta1[d] * theta2[1] + x2_d.
pub fn cut_lambda(data: &CutModelData, theta1: &[f64], theta2: &[f64]) -> Vec<f64> {
    debug_assert_eq!(theta1.len(), data.rows.len());
    debug_assert_eq!(theta2.len(), 2);
    data.rows
        .iter()
        .zip(theta1)
        .map(|(row, t1)| theta2[0] + t1 * theta2[1] + row.x2 as f64)
        .collect()
}

/// Unnormalized log-density of theta_2 given theta_1 and the stage-two data:
/// sum_d [x1_d * lambda_d - exp(lambda_d)] - |theta_2|^2 / (2 prior_variance).
/// Overflow of exp(lambda) yields -inf, a legal off-support value.
pub fn cut_log_density(data: &CutModelData, theta1: &[f64], theta2: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (row, t1) in data.rows.iter().zip(theta1) {
        let lam = theta2[0] + t1 * theta2[1] + row.x2 as f64;
        ll += row.x1 as f64 * lam - lam.exp();
    }
    ll - (theta2[0] * theta2[0] + theta2[1] * theta2[1]) / (2.0 * data.prior_variance)
}

/// Gradient of the log-density and its negative Hessian (h00, h01, h11).
/// The likelihood is concave in theta_2 and the prior is strictly so, hence
/// the negative Hessian is positive definite everywhere.
fn score_and_curvature(
    data: &CutModelData,
    theta1: &[f64],
    theta2: &[f64; 2],
) -> ([f64; 2], [f64; 3]) {
    let prec = 1.0 / data.prior_variance;
    let mut g = [-theta2[0] * prec, -theta2[1] * prec];
    let mut h = [prec, 0.0, prec];
    for (row, t1) in data.rows.iter().zip(theta1) {
        let lam = theta2[0] + t1 * theta2[1] + row.x2 as f64;
        let rate = lam.exp();
        let resid = row.x1 as f64 - rate;
        g[0] += resid;
        g[1] += resid * t1;
        h[0] += rate;
        h[1] += rate * t1;
        h[2] += rate * t1 * t1;
    }
    (g, h)
}

/// Damped Newton ascent for the conditional posterior mode of theta_2.
/// Convergence is judged by the Newton step, not the raw gradient: near the
/// optimum the per-step density gain g^2/2H drops below the floating-point
/// resolution of the log-density long before the gradient reaches zero, while
/// the step length H^{-1}g measures directly how far the mode can still move.
/// Returns the mode and the iteration count.
fn mode_search(data: &CutModelData, theta1: &[f64]) -> Result<([f64; 2], u64)> {
    // Both theta_2 components are O(1); displacements this small are far
    // below anything the downstream sampler can resolve.
    const STEP_TOL: f64 = 1e-9;
    let mut theta = [0.0f64, 0.0];
    let mut lp = cut_log_density(data, theta1, &theta);
    let mut last_dir_norm = f64::INFINITY;
    for iter in 0..60u64 {
        let (g, h) = score_and_curvature(data, theta1, &theta);
        let det = h[0] * h[2] - h[1] * h[1];
        let dir = [
            (h[2] * g[0] - h[1] * g[1]) / det,
            (h[0] * g[1] - h[1] * g[0]) / det,
        ];
        last_dir_norm = dir[0].abs().max(dir[1].abs());
        if last_dir_norm < STEP_TOL {
            return Ok((theta, iter));
        }
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..50 {
            let cand = [theta[0] + step * dir[0], theta[1] + step * dir[1]];
            let lp_cand = cut_log_density(data, theta1, &cand);
            if lp_cand.is_finite() && lp_cand >= lp {
                theta = cand;
                lp = lp_cand;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            // The line search is pinned by float rounding of the density.
            // Accept if the remaining displacement is statistically inert.
            if last_dir_norm < 1e-6 {
                return Ok((theta, iter));
            }
            break;
        }
    }
    if last_dir_norm < 1e-6 {
        Ok((theta, 60))
    } else {
        Err(Error::Model(format!(
            "posterior mode search stalled with Newton step {last_dir_norm:.3e}"
        )))
    }
}

/// Conditional posterior mode of theta_2 at a fixed theta_1 draw.
pub fn cut_posterior_mode(data: &CutModelData, theta1: &[f64]) -> Result<[f64; 2]> {
    if theta1.len() != data.rows.len() {
        return Err(Error::DimensionMismatch {
            expected: data.rows.len(),
            got: theta1.len(),
        });
    }
    mode_search(data, theta1).map(|(mode, _)| mode)
}

fn make_log_target(data: &Arc<CutModelData>, theta1: &Arc<Vec<f64>>) -> LogTarget {
    let data = Arc::clone(data);
    let theta1 = Arc::clone(theta1);
    Box::new(move |theta2: &[f64]| cut_log_density(&data, &theta1, theta2))
}

const PILOT_ROUNDS: u32 = 10;
const PILOT_STEPS_PER_ROUND: u64 = 80;

/// Multiplicative pilot tuning of the isotropic proposal scale, started from
/// the curvature at the mode and adjusted until the empirical acceptance
/// rate lands in [0.2, 0.4]. Returns the scale and the pilot step count,
/// which is charged as setup cost. If the window is never hit the last scale
/// is kept; the estimator stays correct at any scale, only slower.
fn pilot_step_size(
    data: &Arc<CutModelData>,
    theta1: &Arc<Vec<f64>>,
    mode: &[f64; 2],
    curvature: &[f64; 3],
    rng: &mut RngStream,
) -> Result<(f64, u64)> {
    let mean_precision = 0.5 * (curvature[0] + curvature[2]);
    let mut sigma = 2.38 / (2.0 * mean_precision).sqrt();
    let mut steps_used = 0u64;
    for _ in 0..PILOT_ROUNDS {
        let kernel = RwMhKernel::new(2, sigma, make_log_target(data, theta1), "pilot")?;
        let mut state = mode.to_vec();
        let mut accepts = 0u64;
        for _ in 0..PILOT_STEPS_PER_ROUND {
            let next = kernel.step(&state, rng)?;
            if next != state {
                accepts += 1;
            }
            state = next;
        }
        steps_used += PILOT_STEPS_PER_ROUND;
        let acc = accepts as f64 / PILOT_STEPS_PER_ROUND as f64;
        if acc < 0.2 {
            sigma *= 0.6;
        } else if acc > 0.4 {
            sigma *= 1.5;
        } else {
            break;
        }
    }
    Ok((sigma, steps_used))
}

/// Builds the conditional estimation problem for one theta_1 draw: mode
/// search, pilot-tuned random-walk MH kernel over the theta_2 posterior,
/// initial law centred at the mode, and the log-rate vector as test
/// function. `g` consumes the D-vector of conditional means.
pub fn cut_inner_problem(
    data: &Arc<CutModelData>,
    theta1: &[f64],
    params: &JoaParams,
    g: GFunction,
    rng: &mut RngStream,
) -> Result<InnerProblem> {
    let d = data.rows.len();
    if theta1.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta1.len(),
        });
    }
    if g.arity() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: g.arity(),
        });
    }
    let theta1 = Arc::new(theta1.to_vec());
    let (mode, newton_iters) = mode_search(data, &theta1)?;
    let (_, curvature) = score_and_curvature(data, &theta1, &mode);
    let (sigma, pilot_steps) = pilot_step_size(data, &theta1, &mode, &curvature, rng)?;

    let kernel = RwMhKernel::new(2, sigma, make_log_target(data, &theta1), "cut-theta2")?;
    let pi0: Box<dyn Fn(&mut RngStream) -> Vec<f64> + Send + Sync> = {
        let spread = sigma;
        Box::new(move |r: &mut RngStream| {
            vec![
                mode[0] + spread * r.standard_normal(),
                mode[1] + spread * r.standard_normal(),
            ]
        })
    };
    let f: Box<dyn Fn(&Vec<f64>) -> Vec<f64> + Send + Sync> = {
        let data = Arc::clone(data);
        let theta1 = Arc::clone(&theta1);
        Box::new(move |theta2: &Vec<f64>| cut_lambda(&data, &theta1, theta2))
    };
    let subroutine = JoaConfig::new(kernel, pi0, f, d, params.clone())?;
    Ok(InnerProblem {
        subroutine: Box::new(subroutine),
        g,
        setup_cost: pilot_steps + newton_iters,
    })
}

/// The nested target U = E_{theta_1}[max_d E_{theta_2 | theta_1}[lambda_d]]:
/// the outer sampler draws theta_1 from the product of Beta(1 + z, 1 + n - z)
/// posteriors, and the factory rebuilds the conditional problem per draw.
pub fn cut_model_target(
    data: CutModelData,
    params: JoaParams,
    config: MlmcConfig,
) -> Result<NestedSpec<Vec<f64>>> {
    data.validate()?;
    params.validate()?;
    config.validate()?;
    let d = data.dim();
    let data = Arc::new(data);

    let outer: Box<dyn Fn(&mut RngStream) -> Result<Vec<f64>> + Send + Sync> = {
        let data = Arc::clone(&data);
        Box::new(move |rng: &mut RngStream| {
            Ok(data
                .rows
                .iter()
                .map(|row| rng.beta(1.0 + row.z as f64, 1.0 + (row.n - row.z) as f64))
                .collect())
        })
    };
    let factory: Box<dyn Fn(&Vec<f64>, &mut RngStream) -> Result<InnerProblem> + Send + Sync> = {
        let data = Arc::clone(&data);
        let params = params.clone();
        Box::new(move |theta1: &Vec<f64>, rng: &mut RngStream| {
            cut_inner_problem(&data, theta1, &params, GFunction::max_coordinate(d), rng)
        })
    };
    Ok(NestedSpec {
        label: format!("cut-model utility (D = {d})"),
        outer,
        factory,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlmc::mlmc_estimate;
    use crate::nested::nested_estimate;
    use proptest::prelude::*;

    fn beta_means(data: &CutModelData) -> Vec<f64> {
        data.rows
            .iter()
            .map(|r| (1.0 + r.z as f64) / (2.0 + r.n as f64))
            .collect()
    }

    #[test]
    fn from_rows_rejects_bad_records() {
        assert!(matches!(
            CutModelData::from_rows(vec![]).unwrap_err(),
            Error::InvalidParam { name: "rows", .. }
        ));
        let bad = vec![CutRow { z: 5, n: 4, x1: 1, x2: 0 }];
        assert!(matches!(
            CutModelData::from_rows(bad).unwrap_err(),
            Error::InvalidParam { name: "rows", .. }
        ));
    }

    #[test]
    fn synthetic_default_is_valid() {
        let data = CutModelData::synthetic_default();
        assert_eq!(data.dim(), CutModelData::FILE_ROWS);
        data.validate().unwrap();
        assert_eq!(data.prior_variance, 1000.0);
    }

    fn write_temp(name: &str, contents: &str) -> std::path::PathBuf {
        let path = std::env::temp_dir().join(format!("cut-data-{}-{name}", std::process::id()));
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn load_round_trips_and_skips_comments() {
        let data = CutModelData::synthetic_default();
        let mut text = String::from("# Z N X1 X2\n\n");
        for row in &data.rows {
            text.push_str(&format!("{} {} {} {}\n", row.z, row.n, row.x1, row.x2));
        }
        let path = write_temp("good", &text);
        let loaded = CutModelData::load(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(loaded, data);
    }

    #[test]
    fn load_reports_line_numbers() {
        let path = write_temp("short", "1 2 3 4\n1 2 3 4\n");
        let err = CutModelData::load(&path).unwrap_err();
        std::fs::remove_file(&path).unwrap();
        match err {
            Error::Data { message, .. } => assert!(message.contains("13"), "{message}"),
            other => panic!("unexpected error {other:?}"),
        }

        let path = write_temp("token", "1 2 3 4\n1 2 x 4\n");
        let err = CutModelData::load(&path).unwrap_err();
        std::fs::remove_file(&path).unwrap();
        match err {
            Error::Data { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains('x'), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }

        let path = write_temp("fields", "1 2 3 4 5\n");
        let err = CutModelData::load(&path).unwrap_err();
        std::fs::remove_file(&path).unwrap();
        assert!(matches!(err, Error::Data { line: 1, .. }));

        let path = write_temp("order", "9 2 3 4\n");
        let err = CutModelData::load(&path).unwrap_err();
        std::fs::remove_file(&path).unwrap();
        assert!(matches!(err, Error::Data { line: 1, .. }));
    }

    #[test]
    fn lambda_matches_hand_formula() {
        let data = CutModelData {
            rows: vec![
                CutRow { z: 1, n: 4, x1: 3, x2: 2 },
                CutRow { z: 2, n: 5, x1: 7, x2: 0 },
            ],
            prior_variance: 1000.0,
        };
        let lam = cut_lambda(&data, &[0.5, 0.25], &[0.1, 2.0]);
        assert_eq!(lam, vec![0.1 + 1.0 + 2.0, 0.1 + 0.5]);
    }

    #[test]
    fn mode_is_a_stationary_local_maximum() {
        let data = CutModelData::synthetic_default();
        let t1 = beta_means(&data);
        let mode = cut_posterior_mode(&data, &t1).unwrap();
        let (g, _) = score_and_curvature(&data, &t1, &mode);
        assert!(g[0].abs() < 1e-6 && g[1].abs() < 1e-6, "gradient {g:?}");
        let lp = cut_log_density(&data, &t1, &mode);
        for d in [[0.01, 0.0], [-0.01, 0.0], [0.0, 0.01], [0.0, -0.01]] {
            let nearby = [mode[0] + d[0], mode[1] + d[1]];
            assert!(cut_log_density(&data, &t1, &nearby) < lp);
        }
    }

    #[test]
    fn pilot_lands_in_or_near_the_acceptance_window() {
        let data = Arc::new(CutModelData::synthetic_default());
        let theta1 = Arc::new(beta_means(&data));
        let (mode, _) = mode_search(&data, &theta1).unwrap();
        let (_, curv) = score_and_curvature(&data, &theta1, &mode);
        let mut rng = RngStream::new(11, 0);
        let (sigma, steps) = pilot_step_size(&data, &theta1, &mode, &curv, &mut rng).unwrap();
        assert!(steps >= PILOT_STEPS_PER_ROUND);
        let kernel = RwMhKernel::new(2, sigma, make_log_target(&data, &theta1), "check").unwrap();
        let mut state = mode.to_vec();
        let mut accepts = 0u64;
        let n = 4000;
        for _ in 0..n {
            let next = kernel.step(&state, &mut rng).unwrap();
            if next != state {
                accepts += 1;
            }
            state = next;
        }
        let acc = accepts as f64 / n as f64;
        assert!((0.12..=0.5).contains(&acc), "acceptance {acc} at sigma {sigma}");
    }

    /// Huge counts pin both posteriors: theta_1 at z/n and theta_2 at the
    /// generating point, so the nested mean reduces to the deterministic
    /// max_d lambda_d there. x1 = round(exp(lambda_d)) at theta_2 =
    /// (0.5, 1.0) makes that point the near-exact conditional mode.
    #[test]
    fn degenerate_posterior_recovers_analytic_maximum() {
        let data = CutModelData::from_rows(vec![
            CutRow { z: 800_000, n: 4_000_000, x1: 16_318, x2: 9 },
            CutRow { z: 1_600_000, n: 4_000_000, x1: 19_930, x2: 9 },
            CutRow { z: 2_400_000, n: 4_000_000, x1: 24_343, x2: 9 },
            CutRow { z: 3_200_000, n: 4_000_000, x1: 10_938, x2: 8 },
        ])
        .unwrap();
        let t1 = beta_means(&data);
        let mode = cut_posterior_mode(&data, &t1).unwrap();
        assert!((mode[0] - 0.5).abs() < 5e-3 && (mode[1] - 1.0).abs() < 5e-3, "mode {mode:?}");
        let reference = cut_lambda(&data, &t1, &mode)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);

        let params = JoaParams { k: 8, m_avg: 40, max_steps: 20_000 };
        let spec = cut_model_target(data, params, MlmcConfig::default()).unwrap();
        let mut rng = RngStream::new(21, 0);
        let reps = 300;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let v = nested_estimate(&spec, &mut rng).unwrap().value;
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / reps as f64;
        let var = (sum_sq - sum * sum / reps as f64) / (reps as f64 - 1.0);
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - reference).abs() < 3.0 * se,
            "mean {mean} vs reference {reference} (se {se})"
        );
    }

    /// With one group the max is the identity, so the nested machinery must
    /// agree with a hand-built outer-draw-then-estimate loop targeting the
    /// same E[lambda_1]. Joint CLT comparison of the two means.
    #[test]
    fn single_group_matches_hand_built_pipeline() {
        let mut data =
            CutModelData::from_rows(vec![CutRow { z: 30, n: 100, x1: 8, x2: 1 }]).unwrap();
        // A unit prior variance keeps the two theta_2 components identified
        // even though a single group only constrains one direction.
        data.prior_variance = 1.0;
        let params = JoaParams { k: 8, m_avg: 40, max_steps: 50_000 };
        let config = MlmcConfig::default();
        let reps = 2000;

        let spec = cut_model_target(data.clone(), params.clone(), config.clone()).unwrap();
        let mut rng = RngStream::new(31, 0);
        let (mut sum_a, mut sq_a) = (0.0, 0.0);
        for _ in 0..reps {
            let v = nested_estimate(&spec, &mut rng).unwrap().value;
            sum_a += v;
            sq_a += v * v;
        }

        let shared = Arc::new(data);
        let mut rng = RngStream::new(31, 1);
        let (mut sum_b, mut sq_b) = (0.0, 0.0);
        for _ in 0..reps {
            let t1 = vec![rng.beta(31.0, 71.0)];
            let theta1 = Arc::new(t1);
            let (mode, _) = mode_search(&shared, &theta1).unwrap();
            let kernel =
                RwMhKernel::new(2, 0.6, make_log_target(&shared, &theta1), "plain").unwrap();
            let pi0: Box<dyn Fn(&mut RngStream) -> Vec<f64> + Send + Sync> =
                Box::new(move |r: &mut RngStream| {
                    vec![mode[0] + 0.6 * r.standard_normal(), mode[1] + 0.6 * r.standard_normal()]
                });
            let f: Box<dyn Fn(&Vec<f64>) -> Vec<f64> + Send + Sync> = {
                let shared = Arc::clone(&shared);
                let theta1 = Arc::clone(&theta1);
                Box::new(move |theta2: &Vec<f64>| cut_lambda(&shared, &theta1, theta2))
            };
            let sub = JoaConfig::new(kernel, pi0, f, 1, params.clone()).unwrap();
            let est = mlmc_estimate(&sub, &GFunction::identity(), &config, &mut rng).unwrap();
            sum_b += est.w;
            sq_b += est.w * est.w;
        }

        let n = reps as f64;
        let mean_a = sum_a / n;
        let mean_b = sum_b / n;
        let se_a = (((sq_a - sum_a * sum_a / n) / (n - 1.0)) / n).sqrt();
        let se_b = (((sq_b - sum_b * sum_b / n) / (n - 1.0)) / n).sqrt();
        let joint = (se_a * se_a + se_b * se_b).sqrt();
        assert!(
            (mean_a - mean_b).abs() < 3.0 * joint,
            "nested {mean_a} vs hand-built {mean_b} (joint se {joint})"
        );
    }

    /// Two identical groups are exchangeable, so their conditional-mean
    /// log-rates must estimate the same number.
    #[test]
    fn duplicated_groups_agree() {
        let mut data = CutModelData::from_rows(vec![
            CutRow { z: 40, n: 120, x1: 10, x2: 2 },
            CutRow { z: 25, n: 90, x1: 5, x2: 1 },
            CutRow { z: 40, n: 120, x1: 10, x2: 2 },
        ])
        .unwrap();
        // Moderate prior variance keeps the regression well conditioned when
        // the three exposure draws happen to be nearly collinear.
        data.prior_variance = 4.0;
        let params = JoaParams { k: 8, m_avg: 40, max_steps: 50_000 };
        let data = Arc::new(data);
        let reps = 2000;

        let run = |coord: usize, seed_stream: u64| -> (f64, f64) {
            let mut rng = RngStream::new(41, seed_stream);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..reps {
                let t1: Vec<f64> = data
                    .rows
                    .iter()
                    .map(|row| {
                        rng.beta(1.0 + row.z as f64, 1.0 + (row.n - row.z) as f64)
                    })
                    .collect();
                let problem = cut_inner_problem(
                    &data,
                    &t1,
                    &params,
                    GFunction::coordinate(3, coord),
                    &mut rng,
                )
                .unwrap();
                let est = mlmc_estimate(
                    &*problem.subroutine,
                    &problem.g,
                    &MlmcConfig::default(),
                    &mut rng,
                )
                .unwrap();
                sum += est.w;
                sq += est.w * est.w;
            }
            let n = reps as f64;
            let mean = sum / n;
            let se = (((sq - sum * sum / n) / (n - 1.0)) / n).sqrt();
            (mean, se)
        };

        let (mean0, se0) = run(0, 0);
        let (mean2, se2) = run(2, 1);
        let joint = (se0 * se0 + se2 * se2).sqrt();
        assert!(
            (mean0 - mean2).abs() < 3.0 * joint,
            "coordinate 0 {mean0} vs coordinate 2 {mean2} (joint se {joint})"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Newton must land on a stationary point for any small dataset.
        #[test]
        fn mode_search_converges_on_random_data(
            raw in prop::collection::vec((0u64..400, 0u64..60, 0u64..4), 1..5),
            seed in 0u64..1000,
        ) {
            let rows: Vec<CutRow> = raw
                .iter()
                .map(|&(n, x1, x2)| CutRow { z: n / 2, n, x1, x2 })
                .collect();
            let mut data = CutModelData::from_rows(rows).unwrap();
            data.prior_variance = 2.0;
            let mut rng = RngStream::new(seed, 0);
            let t1: Vec<f64> = (0..data.dim()).map(|_| rng.uniform()).collect();
            let mode = cut_posterior_mode(&data, &t1).unwrap();
            // The solver guarantees a short remaining Newton step, i.e. the
            // mode cannot move further than this in parameter space.
            let (g, h) = score_and_curvature(&data, &t1, &mode);
            let det = h[0] * h[2] - h[1] * h[1];
            let dir = [
                (h[2] * g[0] - h[1] * g[1]) / det,
                (h[0] * g[1] - h[1] * g[0]) / det,
            ];
            prop_assert!(dir[0].abs().max(dir[1].abs()) < 2e-6);
        }
    }
}
