//! Square-lattice Ising model on an n x n torus.
//!
//! The target is p_theta(sigma) = exp(-theta H(sigma)) / Z(theta) with
//! H(sigma) = -sum over neighbor pairs of sigma_i sigma_j, counting each
//! site's right and down neighbor once (2 n^2 ordered bonds; on n = 2 this
//! doubles each geometric edge, consistently in both the sampler and the
//! enumeration). Exhaustive enumeration over the 2^(n^2) configurations is
//! exact for n <= 4 and serves as the ground truth for partition-function
//! ratios and natural-statistic expectations.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::joa::{sample_joa, JoaConfig};
use crate::kernels::IsingGibbsKernel;
use crate::mlmc::{GFunction, MlmcConfig, StackedSubroutine};
use crate::models::{EstimatorPipeline, JoaParams};
use crate::rng::RngStream;

/// Spin configuration; entries are +1 or -1 in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsingState {
    pub n: usize,
    pub spins: Vec<i8>,
}

impl IsingState {
    /// All spins up.
    pub fn all_up(n: usize) -> Result<Self> {
        check_lattice_side(n)?;
        Ok(IsingState {
            n,
            spins: vec![1; n * n],
        })
    }

    /// Independent uniform spins; the theta = 0 stationary law.
    pub fn random(n: usize, rng: &mut RngStream) -> Result<Self> {
        check_lattice_side(n)?;
        let spins = (0..n * n)
            .map(|_| if rng.uniform() < 0.5 { 1i8 } else { -1i8 })
            .collect();
        Ok(IsingState { n, spins })
    }

    pub fn validate(&self) -> Result<()> {
        check_lattice_side(self.n)?;
        if self.spins.len() != self.n * self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.n,
                got: self.spins.len(),
            });
        }
        if self.spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Model("spins must be +1 or -1".into()));
        }
        Ok(())
    }
}

fn check_lattice_side(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParam {
            name: "n",
            message: format!("lattice side must be at least 2, got {n}"),
        });
    }
    Ok(())
}

/// Energy H(sigma) = -sum over right/down neighbor pairs of sigma_i sigma_j.
pub fn ising_hamiltonian(state: &IsingState) -> i64 {
    let n = state.n;
    let s = &state.spins;
    let mut sum = 0i64;
    for row in 0..n {
        for col in 0..n {
            let here = s[row * n + col] as i64;
            let right = s[row * n + (col + 1) % n] as i64;
            let down = s[((row + 1) % n) * n + col] as i64;
            sum += here * (right + down);
        }
    }
    -sum
}

/// Histogram of H over all 2^(n^2) configurations; supports n <= 4.
pub struct IsingEnumeration {
    pub n: usize,
    /// Map H value -> number of configurations attaining it.
    pub energy_counts: BTreeMap<i64, u64>,
}

impl IsingEnumeration {
    pub fn new(n: usize) -> Result<Self> {
        check_lattice_side(n)?;
        if n > 4 {
            return Err(Error::InvalidParam {
                name: "n",
                message: format!("exhaustive enumeration supports n <= 4, got {n}"),
            });
        }
        let sites = n * n;
        let mut energy_counts = BTreeMap::new();
        let mut state = IsingState {
            n,
            spins: vec![-1; sites],
        };
        for mask in 0u64..(1u64 << sites) {
            for (i, spin) in state.spins.iter_mut().enumerate() {
                *spin = if mask >> i & 1 == 1 { 1 } else { -1 };
            }
            *energy_counts.entry(ising_hamiltonian(&state)).or_insert(0) += 1;
        }
        Ok(IsingEnumeration { n, energy_counts })
    }

    /// Partition function Z(theta) = sum exp(-theta H).
    pub fn z(&self, theta: f64) -> f64 {
        self.energy_counts
            .iter()
            .map(|(&h, &c)| c as f64 * (-theta * h as f64).exp())
            .sum()
    }

    /// Expectation under p_theta of an arbitrary function of H.
    pub fn expect_of_energy(&self, theta: f64, f: impl Fn(f64) -> f64) -> f64 {
        let z = self.z(theta);
        self.energy_counts
            .iter()
            .map(|(&h, &c)| c as f64 * (-theta * h as f64).exp() * f(h as f64))
            .sum::<f64>()
            / z
    }
}

/// Exact Z(theta_1)/Z(theta_2) by enumeration; rejects n > 4.
pub fn ising_z_ratio_oracle(n: usize, theta1: f64, theta2: f64) -> Result<f64> {
    let enumeration = IsingEnumeration::new(n)?;
    Ok(enumeration.z(theta1) / enumeration.z(theta2))
}

/// Exact E_theta[h] with h = -H (the natural statistic); rejects n > 4.
pub fn ising_natural_stat_expectation(n: usize, theta: f64) -> Result<f64> {
    let enumeration = IsingEnumeration::new(n)?;
    Ok(enumeration.expect_of_energy(theta, |h| -h))
}

/// Per-configuration statistic sigma -> exp(theta * H(sigma)), whose
/// stationary mean is 2^(n^2)/Z(theta). Needs theta >= 0 and rejects (n,
/// theta) combinations where the extreme configurations overflow f64
/// (theta * 2n^2 > 700).
pub fn ising_ratio_f(
    n: usize,
    theta: f64,
) -> Result<impl Fn(&IsingState) -> f64 + Send + Sync + Clone> {
    check_lattice_side(n)?;
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParam {
            name: "theta",
            message: format!("ratio statistic needs theta >= 0 and finite, got {theta}"),
        });
    }
    let max_exp = theta * (2 * n * n) as f64;
    if max_exp > 700.0 {
        return Err(Error::Model(format!(
            "exp(theta*H) overflows f64 at n = {n}, theta = {theta}: theta*2n^2 = {max_exp:.1} > 700"
        )));
    }
    Ok(move |state: &IsingState| (theta * ising_hamiltonian(state) as f64).exp())
}

fn joa_over_gibbs(
    n: usize,
    theta: f64,
    f: impl Fn(&IsingState) -> f64 + Send + Sync + 'static,
    params: &JoaParams,
) -> Result<JoaConfig<IsingGibbsKernel>> {
    JoaConfig::new(
        IsingGibbsKernel::new(n, theta)?,
        Box::new(move |rng: &mut RngStream| IsingState::random(n, rng).expect("n checked")),
        Box::new(move |s: &IsingState| vec![f(s)]),
        1,
        params.clone(),
    )
}

/// Estimator of Z(theta_1)/Z(theta_2): a chain at theta_2 estimating
/// E[exp(theta_2 H)] stacked with a chain at theta_1 estimating
/// E[exp(theta_1 H)], combined through the ratio x_1/x_2. Ground truth is
/// attached for n <= 4.
pub fn ising_ratio_target(
    n: usize,
    theta1: f64,
    theta2: f64,
    params: &JoaParams,
) -> Result<EstimatorPipeline> {
    let f_num = ising_ratio_f(n, theta2)?;
    let f_den = ising_ratio_f(n, theta1)?;
    let numerator = joa_over_gibbs(n, theta2, f_num, params)?;
    let denominator = joa_over_gibbs(n, theta1, f_den, params)?;
    let subroutine =
        StackedSubroutine::new(vec![Box::new(numerator), Box::new(denominator)]);
    let g = GFunction::new(
        2,
        "ratio x1/x2",
        |x: &[f64]| x[1] != 0.0,
        |x: &[f64]| x[0] / x[1],
    );
    let truth = if n <= 4 {
        Some(ising_z_ratio_oracle(n, theta1, theta2)?)
    } else {
        None
    };
    Ok(EstimatorPipeline {
        subroutine: Box::new(subroutine),
        g,
        config: MlmcConfig::default(),
        truth,
    })
}

/// Estimator of 1/E_theta[h] with h = -H: a single chain estimating E[h]
/// combined through the reciprocal. Pair with a delta-transformation in the
/// level config; h concentrates away from zero for theta > 0 but single
/// subroutine draws can stray. Ground truth is attached for n <= 4.
pub fn ising_natural_stat_target(
    n: usize,
    theta: f64,
    params: &JoaParams,
) -> Result<EstimatorPipeline> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParam {
            name: "theta",
            message: format!(
                "natural-statistic target needs theta > 0 (E[h] = 0 at theta = 0), got {theta}"
            ),
        });
    }
    let sub = joa_over_gibbs(
        n,
        theta,
        |s: &IsingState| -(ising_hamiltonian(s) as f64),
        params,
    )?;
    let truth = if n <= 4 {
        Some(1.0 / ising_natural_stat_expectation(n, theta)?)
    } else {
        None
    };
    Ok(EstimatorPipeline {
        subroutine: Box::new(sub),
        g: GFunction::reciprocal(),
        // The reciprocal is singular at 0; the transform keeps stray batch
        // means out of a small ball around it without biasing the mean.
        config: MlmcConfig {
            p: MlmcConfig::DEFAULT_P,
            delta: Some(0.5),
            max_level: 40,
        },
        truth,
    })
}

/// One subroutine draw: the JOA estimate of E_theta[exp(theta H)] from a
/// coupled Gibbs pair. Exposed for tests that check the stacked estimator's
/// coordinates individually.
pub fn ising_ratio_coordinate(
    n: usize,
    theta: f64,
    params: &JoaParams,
    rng: &mut RngStream,
) -> Result<f64> {
    let f = ising_ratio_f(n, theta)?;
    let cfg = joa_over_gibbs(n, theta, f, params)?;
    Ok(sample_joa(&cfg, rng)?.value[0])
}
