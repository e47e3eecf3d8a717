//! Random-walk Metropolis-Hastings with reflection-maximal proposal coupling.
//!
//! The two chains propose from isotropic Gaussians centred at their current
//! states. With the maximal-coupling probability the proposals are the exact
//! same floating-point vector; otherwise the second proposal is the first one
//! reflected in the hyperplane separating the chains, which preserves its
//! marginal law. A single shared uniform decides both accept/reject steps, so
//! coupled proposals that are jointly accepted make the chains meet exactly.

use crate::error::{Error, Result};
use crate::kernels::{CoupledKernel, MarkovKernel};
use crate::rng::RngStream;

pub type LogTarget = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub struct RwMhKernel {
    dim: usize,
    step_size: f64,
    log_target: LogTarget,
    label: String,
}

impl std::fmt::Debug for RwMhKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RwMhKernel")
            .field("dim", &self.dim)
            .field("step_size", &self.step_size)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl RwMhKernel {
    /// Rejects non-positive or non-finite step sizes and zero dimension.
    pub fn new(
        dim: usize,
        step_size: f64,
        log_target: LogTarget,
        label: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam {
                name: "dim",
                message: "state dimension must be positive".into(),
            });
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidParam {
                name: "step_size",
                message: format!("proposal step size must be positive and finite, got {step_size}"),
            });
        }
        Ok(RwMhKernel {
            dim,
            step_size,
            log_target,
            label: label.into(),
        })
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn log_target(&self, x: &[f64]) -> f64 {
        (self.log_target)(x)
    }

    /// -inf is a legal value off the support; NaN and +inf are not.
    fn checked_log_target(&self, x: &[f64], current: bool) -> Result<f64> {
        let v = (self.log_target)(x);
        if v.is_nan() || v == f64::INFINITY || (current && v == f64::NEG_INFINITY) {
            return Err(Error::NonFiniteLogTarget);
        }
        Ok(v)
    }

    fn draw_increment(&self, rng: &mut RngStream) -> Vec<f64> {
        (0..self.dim).map(|_| rng.standard_normal()).collect()
    }
}

impl MarkovKernel for RwMhKernel {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn step(&self, state: &Vec<f64>, rng: &mut RngStream) -> Result<Vec<f64>> {
        self.validate_state(state)?;
        let lt_cur = self.checked_log_target(state, true)?;
        let xi = self.draw_increment(rng);
        let prop: Vec<f64> = state
            .iter()
            .zip(&xi)
            .map(|(x, e)| x + self.step_size * e)
            .collect();
        let lt_prop = self.checked_log_target(&prop, false)?;
        let log_u = rng.uniform().ln();
        Ok(if log_u < lt_prop - lt_cur { prop } else { state.clone() })
    }

    fn validate_state(&self, state: &Vec<f64>) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: state.len(),
            });
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        Ok(())
    }
}

impl CoupledKernel for RwMhKernel {
    fn coupled_step(
        &self,
        y: &Vec<f64>,
        z: &Vec<f64>,
        rng: &mut RngStream,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate_state(y)?;
        self.validate_state(z)?;
        let lt_y = self.checked_log_target(y, true)?;
        let lt_z = self.checked_log_target(z, true)?;

        let sigma = self.step_size;
        let xi = self.draw_increment(rng);
        let prop_y: Vec<f64> = y.iter().zip(&xi).map(|(x, e)| x + sigma * e).collect();

        let prop_z: Vec<f64> = if y == z {
            // Equal chains: the maximal coupling is the identity coupling.
            prop_y.clone()
        } else {
            // d is the separation in proposal (standardized) coordinates.
            let d: Vec<f64> = y.iter().zip(z).map(|(a, b)| (a - b) / sigma).collect();
            // Accept prop_y as a draw from the z-proposal with probability
            // q_z(prop_y) / q_y(prop_y) = exp(-(|xi+d|^2 - |xi|^2)/2).
            let log_ratio: f64 = -0.5
                * xi.iter()
                    .zip(&d)
                    .map(|(e, dd)| (e + dd).powi(2) - e * e)
                    .sum::<f64>();
            if rng.uniform().ln() < log_ratio {
                prop_y.clone()
            } else {
                // Reflect the increment across the separating direction.
                let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                let e_dir: Vec<f64> = d.iter().map(|x| x / norm).collect();
                let dot: f64 = xi.iter().zip(&e_dir).map(|(a, b)| a * b).sum();
                z.iter()
                    .zip(xi.iter().zip(&e_dir))
                    .map(|(zb, (xe, ee))| zb + sigma * (xe - 2.0 * dot * ee))
                    .collect()
            }
        };

        let lt_prop_y = self.checked_log_target(&prop_y, false)?;
        let lt_prop_z = self.checked_log_target(&prop_z, false)?;
        // Shared acceptance uniform: identical proposals accept or reject
        // together whenever their acceptance ratios agree.
        let log_u = rng.uniform().ln();
        let next_y = if log_u < lt_prop_y - lt_y { prop_y } else { y.clone() };
        let next_z = if log_u < lt_prop_z - lt_z { prop_z } else { z.clone() };
        Ok((next_y, next_z))
    }
}
