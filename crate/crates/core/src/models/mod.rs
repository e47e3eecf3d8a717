//! Shipped experiment targets with desk-scale ground truths.
//!
//! Each target wires a coupled-chain subroutine to an outer function and, when
//! an exact oracle exists at the configured size, attaches the true value so
//! harness reports can show relative error.

pub mod beta;
pub mod cut;
pub mod ising;

pub use crate::joa::JoaParams;

use crate::mlmc::{GFunction, MlmcConfig, Subroutine};

/// A ready-to-run estimation problem: subroutine, outer function, level
/// configuration, and the exact answer when one is computable.
pub struct EstimatorPipeline {
    pub subroutine: Box<dyn Subroutine>,
    pub g: GFunction,
    pub config: MlmcConfig,
    pub truth: Option<f64>,
}
