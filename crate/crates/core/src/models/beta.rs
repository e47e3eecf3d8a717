//! Product-of-reciprocals target over independent Beta(i, 1) coordinates.
//!
//! Coordinate i has density i x^(i-1) on (0, 1) and mean i/(i+1), so
//! g(x) = prod_i 1/x_i evaluated at the mean vector telescopes to K + 1.
//! Each coordinate gets its own reflection-coupled 1-d random-walk chain;
//! the chains are stacked into one vector subroutine whose meeting time is
//! the slowest coordinate's.

use crate::error::{Error, Result};
use crate::joa::{JoaConfig, JoaParams};
use crate::kernels::RwMhKernel;
use crate::mlmc::{GFunction, MlmcConfig, StackedSubroutine};
use crate::models::EstimatorPipeline;
use crate::rng::RngStream;

/// Spread of Beta(i, 1), used to scale the walk to the target's width.
fn beta_i1_sd(i: usize) -> f64 {
    let i = i as f64;
    (i / ((i + 1.0) * (i + 1.0) * (i + 2.0))).sqrt()
}

/// Coupled random-walk chain for one Beta(i, 1) coordinate with f = identity.
pub fn beta_coordinate_chain(i: usize, params: &JoaParams) -> Result<JoaConfig<RwMhKernel>> {
    if i == 0 {
        return Err(Error::InvalidParam {
            name: "i",
            message: "Beta(i, 1) coordinates are indexed from 1".into(),
        });
    }
    let shape = i as f64;
    let kernel = RwMhKernel::new(
        1,
        2.4 * beta_i1_sd(i),
        Box::new(move |x: &[f64]| {
            if x[0] > 0.0 && x[0] < 1.0 {
                (shape - 1.0) * x[0].ln()
            } else {
                f64::NEG_INFINITY
            }
        }),
        format!("beta({i},1) walk"),
    )?;
    JoaConfig::new(
        kernel,
        Box::new(|rng: &mut RngStream| vec![rng.uniform()]),
        Box::new(|s: &Vec<f64>| s.clone()),
        1,
        params.clone(),
    )
}

/// Pipeline for g(E[X]) = prod_{i=1..K} 1/E[X_i] = K + 1.
pub fn beta_product_target(k_dims: usize, params: &JoaParams) -> Result<EstimatorPipeline> {
    if k_dims == 0 {
        return Err(Error::InvalidParam {
            name: "K",
            message: "product target needs at least one coordinate".into(),
        });
    }
    let mut parts: Vec<Box<dyn crate::mlmc::Subroutine>> = Vec::with_capacity(k_dims);
    for i in 1..=k_dims {
        parts.push(Box::new(beta_coordinate_chain(i, params)?));
    }
    let g = GFunction::new(
        k_dims,
        "product of reciprocals",
        |x: &[f64]| x.iter().all(|v| *v != 0.0),
        |x: &[f64]| x.iter().map(|v| 1.0 / v).product(),
    );
    Ok(EstimatorPipeline {
        subroutine: Box::new(StackedSubroutine::new(parts)),
        g,
        config: MlmcConfig::default(),
        truth: Some((k_dims + 1) as f64),
    })
}

/// Plug-in comparator: one plain MH chain per coordinate, the first 10% of
/// each chain discarded as burn-in, empirical means plugged into the product
/// of reciprocals. Consumes at most `budget` kernel steps split evenly over
/// the coordinates. `init` pins every chain's starting point (useful for
/// exposing warm-up bias); `None` draws the usual uniform start. Biased at
/// any finite budget; it exists to be compared against.
pub fn beta_plugin_estimate(
    k_dims: usize,
    params: &JoaParams,
    budget: u64,
    init: Option<f64>,
    rng: &mut RngStream,
) -> Result<f64> {
    use crate::kernels::MarkovKernel;

    if k_dims == 0 {
        return Err(Error::InvalidParam {
            name: "K",
            message: "product target needs at least one coordinate".into(),
        });
    }
    let per_chain = (budget / k_dims as u64).max(2);
    let burn = per_chain / 10;
    let mut product = 1.0;
    for i in 1..=k_dims {
        let cfg = beta_coordinate_chain(i, params)?;
        let mut state = match init {
            Some(x) => vec![x],
            None => (cfg.pi0)(rng),
        };
        let mut acc = 0.0;
        for t in 0..per_chain {
            state = cfg.kernel.step(&state, rng)?;
            if t >= burn {
                acc += state[0];
            }
        }
        let mean = acc / (per_chain - burn) as f64;
        if mean == 0.0 {
            return Err(Error::OutsideDomain {
                label: "product of reciprocals".into(),
                point: vec![mean],
            });
        }
        product *= 1.0 / mean;
    }
    Ok(product)
}
