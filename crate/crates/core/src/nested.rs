//! Unbiased nested expectations `E_x[f(x, E[phi(x, .) | x])]`.
//!
//! The outer variable is drawn directly; the inner conditional mean is only
//! reachable through an unbiased subroutine (exact draws or a coupled-chain
//! estimator rebuilt for the drawn `x`). One outer draw triggers exactly one
//! inner multilevel estimate of `g_x := f(x, .)`, whose unbiasedness for
//! `g_x(E[phi | x])` makes the whole composition unbiased by the tower
//! property. Averaging across outer draws is the harness's job.

use crate::error::{Error, Result};
use crate::mlmc::{mlmc_estimate, GFunction, MlmcConfig, Subroutine};
use crate::rng::RngStream;

/// The inner estimation problem for one fixed outer draw: a subroutine
/// targeting the conditional mean vector and the function applied to it.
pub struct InnerProblem {
    pub subroutine: Box<dyn Subroutine>,
    pub g: GFunction,
    /// Cost charged for building the problem (for example proposal tuning
    /// pilots); added to the replication's cost.
    pub setup_cost: u64,
}

/// A nested target: outer sampler, per-`x` inner problem factory, and the
/// level configuration shared by every inner estimate.
pub struct NestedSpec<X> {
    pub label: String,
    pub outer: Box<dyn Fn(&mut RngStream) -> Result<X> + Send + Sync>,
    pub factory: Box<dyn Fn(&X, &mut RngStream) -> Result<InnerProblem> + Send + Sync>,
    pub config: MlmcConfig,
}

/// One unbiased draw of the nested estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedEstimate {
    pub value: f64,
    /// Setup cost plus the inner batch's subroutine cost.
    pub cost: u64,
    /// Level drawn by the inner stage.
    pub level: u64,
}

fn attach<X: std::fmt::Debug>(label: &str, x: &X, e: Error) -> Error {
    Error::NestedContext {
        outer: format!("{label}: x = {x:?}"),
        source: Box::new(e),
    }
}

/// Draw the outer variable, build the conditional problem, and run one inner
/// multilevel estimate. Inner failures are wrapped with the conditioning
/// value so error reports can be traced back to the outer draw.
pub fn nested_estimate<X: std::fmt::Debug>(
    spec: &NestedSpec<X>,
    rng: &mut RngStream,
) -> Result<NestedEstimate> {
    spec.config.validate()?;
    let x = (spec.outer)(rng).map_err(|e| Error::NestedContext {
        outer: format!("{}: outer draw", spec.label),
        source: Box::new(e),
    })?;
    let problem = (spec.factory)(&x, rng).map_err(|e| attach(&spec.label, &x, e))?;
    let inner = mlmc_estimate(&*problem.subroutine, &problem.g, &spec.config, rng)
        .map_err(|e| attach(&spec.label, &x, e))?;
    Ok(NestedEstimate {
        value: inner.w,
        cost: problem.setup_cost + inner.cost,
        level: inner.level,
    })
}
