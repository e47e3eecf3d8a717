//! Finite-state test kernels with exact maximal couplings.
//!
//! These exist to exercise the estimator stack against targets whose
//! stationary law is computable by linear algebra. The coupling is the
//! classical maximal coupling of the two conditional rows: the per-step
//! meeting probability from `(y, z)` equals `1 - TV(P(y,.), P(z,.))`, and on
//! the non-meeting event the residual draws are independent.

use crate::error::{Error, Result};
use crate::kernels::{CoupledKernel, MarkovKernel};
use crate::rng::RngStream;

/// Row-stochastic transition matrix over states `0..k`.
#[derive(Debug, Clone)]
pub struct FiniteKernel {
    rows: Vec<Vec<f64>>,
    label: String,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl FiniteKernel {
    /// Rejects non-square matrices and rows that are not probability vectors.
    pub fn new(rows: Vec<Vec<f64>>, label: impl Into<String>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidParam {
                name: "rows",
                message: "transition matrix must be non-empty".into(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan())
                || (sum - 1.0).abs() > ROW_SUM_TOL
            {
                return Err(Error::NonStochasticRow { row: i });
            }
        }
        Ok(FiniteKernel {
            rows,
            label: label.into(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.rows[state]
    }

    /// Per-step meeting probability from `(y, z)`: sum of row minima,
    /// i.e. `1 - TV` of the two conditional rows.
    pub fn meeting_probability(&self, y: usize, z: usize) -> f64 {
        self.rows[y]
            .iter()
            .zip(&self.rows[z])
            .map(|(a, b)| a.min(*b))
            .sum()
    }

    /// Exact joint law of one coupled step from `(y, z)`, indexed
    /// `[next_y][next_z]`. Used as the oracle for coupling correctness.
    pub fn coupled_step_law(&self, y: usize, z: usize) -> Vec<Vec<f64>> {
        let k = self.n_states();
        let p = &self.rows[y];
        let q = &self.rows[z];
        let mins: Vec<f64> = (0..k).map(|a| p[a].min(q[a])).collect();
        let w: f64 = mins.iter().sum();
        let mut joint = vec![vec![0.0; k]; k];
        for a in 0..k {
            joint[a][a] = mins[a];
        }
        if w < 1.0 {
            let resid = 1.0 - w;
            for a in 0..k {
                for b in 0..k {
                    // Residual supports are disjoint, so a == b never occurs here.
                    joint[a][b] += (p[a] - mins[a]) * (q[b] - mins[b]) / resid;
                }
            }
        }
        joint
    }

    fn sample_from(weights: impl Iterator<Item = f64>, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (i, w) in weights.enumerate() {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }
}

impl MarkovKernel for FiniteKernel {
    type State = usize;

    fn dim(&self) -> usize {
        1
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn step(&self, state: &usize, rng: &mut RngStream) -> Result<usize> {
        self.validate_state(state)?;
        let u = rng.uniform();
        Ok(Self::sample_from(self.rows[*state].iter().copied(), u))
    }

    fn validate_state(&self, state: &usize) -> Result<()> {
        if *state < self.n_states() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n_states(),
                got: *state,
            })
        }
    }
}

impl CoupledKernel for FiniteKernel {
    fn coupled_step(
        &self,
        y: &usize,
        z: &usize,
        rng: &mut RngStream,
    ) -> Result<(usize, usize)> {
        self.validate_state(y)?;
        self.validate_state(z)?;
        let p = &self.rows[*y];
        let q = &self.rows[*z];
        let mins: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
        let w: f64 = mins.iter().sum();
        let u = rng.uniform();
        if u < w {
            // Common component: u is uniform on [0, w) here, so inversion
            // against the min-measure is exact.
            let a = Self::sample_from(mins.iter().copied(), u);
            Ok((a, a))
        } else {
            let resid = 1.0 - w;
            let uy = rng.uniform();
            let a = Self::sample_from(p.iter().zip(&mins).map(|(p, m)| (p - m) / resid), uy);
            let uz = rng.uniform();
            let b = Self::sample_from(q.iter().zip(&mins).map(|(q, m)| (q - m) / resid), uz);
            Ok((a, b))
        }
    }
}

/// Stationary distribution of a row-stochastic matrix by direct linear solve
/// of `pi P = pi`, `sum pi = 1` (Gaussian elimination with partial pivoting).
///
/// Test-oracle support: independent of the sampling path it is used to check.
pub fn stationary_distribution(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidParam {
            name: "rows",
            message: "stationary solve needs a square matrix".into(),
        });
    }
    // Build (P^T - I) with the last equation replaced by the normalization.
    let mut a = vec![vec![0.0f64; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = rows[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[k - 1][j] = 1.0;
    }
    a[k - 1][k] = 1.0;

    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        if a[col][col].abs() < 1e-14 {
            return Err(Error::Model("singular stationary system".into()));
        }
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok((0..k).map(|i| a[i][k] / a[i][i]).collect())
}
