//! Randomized multilevel removal of the nonlinearity bias in `g(E[X])`.
//!
//! Averaging subroutine draws and applying `g` gives a biased estimate of
//! `g(E[X])` whenever `g` is nonlinear. Writing `g(E[X])` as a telescoping
//! series over batch sizes `2^n` and sampling a single random level `N`
//! (geometric on {1, 2, ...}) with weight `1/p_N` removes that bias:
//!
//! ```text
//! W = Delta_N / p_N + g(H_1),
//! Delta_n = g(mean of 2^n draws)
//!           - (g(mean of odd-position draws) + g(mean of even-position draws)) / 2.
//! ```
//!
//! The odd/even split is antithetic: for affine `g` every `Delta_n` cancels
//! structurally, and for smooth `g` the second-order remainder makes
//! `E[Delta_n^2]` decay fast enough that both the variance and the expected
//! cost of `W` stay finite for `p` in the documented range.
//!
//! The module also ships the delta-transformation (randomized +-2*delta shift
//! that keeps estimates out of a forbidden ball around the origin without
//! moving their mean) and direct single-shot estimators for polynomial and
//! power-series `g`, which need no level randomization at all.

use crate::error::{Error, Result};
use crate::joa::{sample_joa, JoaConfig, UnbiasedSample};
use crate::kernels::CoupledKernel;
use crate::rng::RngStream;

/// Source of i.i.d. unbiased vector estimates of some mean `m(pi)`.
pub trait Subroutine: Send + Sync {
    /// Output dimension of each draw.
    fn dim(&self) -> usize;

    /// One fresh draw, independent of all previous ones given the stream.
    fn draw(&self, rng: &mut RngStream) -> Result<UnbiasedSample>;
}

impl<K: CoupledKernel> Subroutine for JoaConfig<K> {
    fn dim(&self) -> usize {
        self.f_dim
    }

    fn draw(&self, rng: &mut RngStream) -> Result<UnbiasedSample> {
        sample_joa(self, rng)
    }
}

/// Exact-draw subroutine for targets that can be simulated directly. Each
/// draw reports the configured flat cost and a meeting time of 1.
pub struct FnSubroutine {
    dim: usize,
    cost_per_draw: u64,
    f: Box<dyn Fn(&mut RngStream) -> Vec<f64> + Send + Sync>,
}

impl FnSubroutine {
    pub fn new(
        dim: usize,
        cost_per_draw: u64,
        f: impl Fn(&mut RngStream) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParam {
                name: "dim",
                message: "subroutine output must have at least one component".into(),
            });
        }
        if cost_per_draw == 0 {
            return Err(Error::InvalidParam {
                name: "cost_per_draw",
                message: "each draw must cost at least one unit".into(),
            });
        }
        Ok(FnSubroutine {
            dim,
            cost_per_draw,
            f: Box::new(f),
        })
    }

    /// Scalar draw with unit cost.
    pub fn scalar(f: impl Fn(&mut RngStream) -> f64 + Send + Sync + 'static) -> Self {
        FnSubroutine {
            dim: 1,
            cost_per_draw: 1,
            f: Box::new(move |rng| vec![f(rng)]),
        }
    }
}

impl Subroutine for FnSubroutine {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, rng: &mut RngStream) -> Result<UnbiasedSample> {
        let value = (self.f)(rng);
        if value.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        Ok(UnbiasedSample {
            value,
            cost: self.cost_per_draw,
            tau: 1,
        })
    }
}

/// Concatenation of independent subroutines into one vector subroutine.
///
/// Each draw runs every part once on the same stream (sequentially, so the
/// result is reproducible), concatenates the values, sums the costs, and
/// reports the slowest part's meeting time.
pub struct StackedSubroutine {
    parts: Vec<Box<dyn Subroutine>>,
    dim: usize,
}

impl StackedSubroutine {
    pub fn new(parts: Vec<Box<dyn Subroutine>>) -> Self {
        let dim = parts.iter().map(|p| p.dim()).sum();
        StackedSubroutine { parts, dim }
    }
}

impl Subroutine for StackedSubroutine {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, rng: &mut RngStream) -> Result<UnbiasedSample> {
        let mut value = Vec::with_capacity(self.dim);
        let mut cost = 0u64;
        let mut tau = 1u64;
        for part in &self.parts {
            let s = part.draw(rng)?;
            value.extend(s.value);
            cost += s.cost;
            tau = tau.max(s.tau);
        }
        Ok(UnbiasedSample { value, cost, tau })
    }
}

/// The outer function `g: R^m -> R` with an explicit domain predicate.
pub struct GFunction {
    arity: usize,
    label: String,
    in_domain: Box<dyn Fn(&[f64]) -> bool + Send + Sync>,
    eval: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl GFunction {
    pub fn new(
        arity: usize,
        label: impl Into<String>,
        in_domain: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        GFunction {
            arity,
            label: label.into(),
            in_domain: Box::new(in_domain),
            eval: Box::new(eval),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Evaluate with arity, domain, and finiteness checks. Domain violations
    /// carry the offending point so failed replications can be diagnosed.
    pub fn apply(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.arity {
            return Err(Error::DimensionMismatch {
                expected: self.arity,
                got: x.len(),
            });
        }
        if !(self.in_domain)(x) {
            return Err(Error::OutsideDomain {
                label: self.label.clone(),
                point: x.to_vec(),
            });
        }
        let y = (self.eval)(x);
        if !y.is_finite() {
            return Err(Error::NonFiniteValue);
        }
        Ok(y)
    }

    pub fn identity() -> Self {
        GFunction::new(1, "identity", |_| true, |x| x[0])
    }

    /// `g(x) = 1/x`, undefined at 0.
    pub fn reciprocal() -> Self {
        GFunction::new(1, "reciprocal", |x| x[0] != 0.0, |x| 1.0 / x[0])
    }

    /// `g(x) = intercept + slope . x`.
    pub fn affine(intercept: f64, slope: Vec<f64>) -> Self {
        let arity = slope.len();
        GFunction::new(arity, "affine", |_| true, move |x| {
            intercept
                + slope
                    .iter()
                    .zip(x)
                    .map(|(b, v)| b * v)
                    .sum::<f64>()
        })
    }

    /// Projection onto one coordinate.
    pub fn coordinate(arity: usize, index: usize) -> Self {
        assert!(index < arity, "coordinate index out of range");
        GFunction::new(arity, format!("coordinate {index}"), |_| true, move |x| {
            x[index]
        })
    }

    /// `g(x) = max_i x_i`.
    pub fn max_coordinate(arity: usize) -> Self {
        assert!(arity > 0, "max needs at least one coordinate");
        GFunction::new(arity, "max coordinate", |_| true, |x| {
            x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        })
    }
}

/// Level distribution and optional domain transform for [`mlmc_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcConfig {
    /// Geometric success probability for the level draw; must sit in
    /// (1/2, 1). Values at or below 1/2 make the expected batch size
    /// infinite and are rejected.
    pub p: f64,
    /// Radius of the forbidden ball around the origin; draws landing inside
    /// are shifted by +-2*delta before `g` sees them.
    pub delta: Option<f64>,
    /// Hard cap on the level `N`: a draw above it is a counted replication
    /// error with probability (1-p)^max_level instead of a huge batch.
    pub max_level: u32,
}

impl MlmcConfig {
    /// Default level parameter used when neither `p` nor a smoothness rate
    /// is supplied.
    pub const DEFAULT_P: f64 = 0.7;

    pub fn new(p: f64) -> Result<Self> {
        let cfg = MlmcConfig {
            p,
            delta: None,
            max_level: 40,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.5 && self.p < 1.0) {
            return Err(Error::InvalidParam {
                name: "p",
                message: format!(
                    "level probability must satisfy 1/2 < p < 1 (p <= 1/2 gives infinite \
                     expected cost), got {}",
                    self.p
                ),
            });
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidParam {
                    name: "delta",
                    message: format!("transform radius must be positive and finite, got {d}"),
                });
            }
        }
        if self.max_level == 0 {
            return Err(Error::InvalidParam {
                name: "max_level",
                message: "level cap must be at least 1".into(),
            });
        }
        Ok(())
    }
}

impl Default for MlmcConfig {
    fn default() -> Self {
        MlmcConfig {
            p: Self::DEFAULT_P,
            delta: None,
            max_level: 40,
        }
    }
}

/// One unbiased estimate of `g(m(pi))` with its cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcEstimate {
    /// The estimate `W`.
    pub w: f64,
    /// The sampled level `N >= 1`.
    pub level: u64,
    /// Total subroutine cost across the batch.
    pub cost: u64,
    /// Batch size `2^level`.
    pub n_subcalls: u64,
}

/// Variance-minimizing level probability for a smoothness rate `gamma`
/// (the exponent in `E[Delta_n^2] <= C 2^(-(1+gamma) n)`): `1 - 2^(-1-gamma/2)`,
/// which lies strictly inside the admissible interval
/// `(1/2, 1 - 2^(-(1+gamma)))` for every `gamma > 0`.
pub fn recommended_p(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParam {
            name: "gamma",
            message: format!("smoothness rate must be positive and finite, got {gamma}"),
        });
    }
    Ok(1.0 - (-1.0 - gamma / 2.0).exp2())
}

/// Shift `h` by +-2*delta (one shared sign across coordinates) when it lies
/// inside the open ball of radius `delta`; leave it unchanged otherwise.
/// The shift is symmetric, so the mean is preserved, and the output always
/// has norm at least `delta`.
pub fn delta_transform(h: &[f64], delta: f64, rng: &mut RngStream) -> Vec<f64> {
    assert!(
        delta > 0.0 && delta.is_finite(),
        "transform radius must be positive and finite"
    );
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm >= delta {
        return h.to_vec();
    }
    let b = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
    let shifted: Vec<f64> = h.iter().map(|v| v + 2.0 * delta * b).collect();
    debug_assert!(
        shifted.iter().map(|v| v * v).sum::<f64>().sqrt() >= delta,
        "shifted point fell back inside the ball"
    );
    shifted
}

/// Antithetic difference from the two half-batch means. The full-batch mean
/// is formed as the midpoint of the half means so that affine `g` cancels to
/// rounding error.
fn delta_from_half_means(g: &GFunction, mean_odd: &[f64], mean_even: &[f64]) -> Result<f64> {
    let mean_all: Vec<f64> = mean_odd
        .iter()
        .zip(mean_even)
        .map(|(o, e)| 0.5 * (o + e))
        .collect();
    Ok(g.apply(&mean_all)? - 0.5 * (g.apply(mean_odd)? + g.apply(mean_even)?))
}

/// `Delta_n` over an explicit batch of `2^n` sample values. Positions
/// 1, 3, 5, ... in generation order (indices 0, 2, 4, ...) form the odd
/// half-batch, the rest the even half-batch.
pub fn antithetic_delta(g: &GFunction, samples: &[Vec<f64>], n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParam {
            name: "n",
            message: "antithetic difference needs level n >= 1".into(),
        });
    }
    let expected = 1usize << n;
    if samples.len() != expected {
        return Err(Error::InvalidParam {
            name: "samples",
            message: format!(
                "level {n} needs exactly {expected} samples, got {}",
                samples.len()
            ),
        });
    }
    let dim = g.arity();
    let half = (expected / 2) as f64;
    let mut sum_odd = vec![0.0; dim];
    let mut sum_even = vec![0.0; dim];
    for (i, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.len(),
            });
        }
        let acc = if i % 2 == 0 {
            &mut sum_odd
        } else {
            &mut sum_even
        };
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let mean_odd: Vec<f64> = sum_odd.iter().map(|v| v / half).collect();
    let mean_even: Vec<f64> = sum_even.iter().map(|v| v / half).collect();
    delta_from_half_means(g, &mean_odd, &mean_even)
}

/// Draw one unbiased estimate of `g(m(pi))`.
///
/// Draws `N ~ Geo(p)`, runs the subroutine `2^N` times, applies the
/// delta-transformation to each draw if configured, and returns
/// `Delta_N / p_N + g(H_1)` where `H_1` is the first (transformed) draw of
/// the batch. Runs in constant memory: only the half-batch running sums and
/// the first draw are kept.
pub fn mlmc_estimate(
    sub: &dyn Subroutine,
    g: &GFunction,
    cfg: &MlmcConfig,
    rng: &mut RngStream,
) -> Result<MlmcEstimate> {
    cfg.validate()?;
    let dim = sub.dim();
    if g.arity() != dim {
        return Err(Error::DimensionMismatch {
            expected: g.arity(),
            got: dim,
        });
    }
    let level = rng.geometric(cfg.p);
    if level > cfg.max_level as u64 {
        return Err(Error::LevelCapExceeded {
            level: level.min(u32::MAX as u64) as u32,
            max_level: cfg.max_level,
        });
    }
    let n_subcalls = 1u64 << level;
    let half = (n_subcalls / 2) as f64;

    let mut sum_odd = vec![0.0; dim];
    let mut sum_even = vec![0.0; dim];
    let mut first: Option<Vec<f64>> = None;
    let mut cost = 0u64;
    for i in 0..n_subcalls {
        let s = sub.draw(rng)?;
        if s.value.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.value.len(),
            });
        }
        cost += s.cost;
        let value = match cfg.delta {
            Some(d) => delta_transform(&s.value, d, rng),
            None => s.value,
        };
        let acc = if i % 2 == 0 {
            &mut sum_odd
        } else {
            &mut sum_even
        };
        for (a, v) in acc.iter_mut().zip(&value) {
            *a += v;
        }
        if first.is_none() {
            first = Some(value);
        }
    }
    let mean_odd: Vec<f64> = sum_odd.iter().map(|v| v / half).collect();
    let mean_even: Vec<f64> = sum_even.iter().map(|v| v / half).collect();
    let delta_n = delta_from_half_means(g, &mean_odd, &mean_even)?;
    let p_n = (1.0 - cfg.p).powi(level as i32 - 1) * cfg.p;
    let w = delta_n / p_n + g.apply(&first.expect("batch is nonempty"))?;
    if !w.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    Ok(MlmcEstimate {
        w,
        level,
        cost,
        n_subcalls,
    })
}

/// Polynomial in `m` variables as a sparse list of (multi-index, coefficient)
/// terms; the degree is the largest total order.
#[derive(Debug, Clone)]
pub struct MultiIndexPoly {
    arity: usize,
    terms: Vec<(Vec<u32>, f64)>,
    degree: u32,
}

impl MultiIndexPoly {
    pub fn new(arity: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidParam {
                name: "arity",
                message: "polynomial needs at least one variable".into(),
            });
        }
        let mut degree = 0;
        for (index, coeff) in &terms {
            if index.len() != arity {
                return Err(Error::DimensionMismatch {
                    expected: arity,
                    got: index.len(),
                });
            }
            if !coeff.is_finite() {
                return Err(Error::InvalidParam {
                    name: "terms",
                    message: format!("coefficient for {index:?} is not finite"),
                });
            }
            degree = degree.max(index.iter().sum::<u32>());
        }
        Ok(MultiIndexPoly {
            arity,
            terms,
            degree,
        })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Plain evaluation, used by oracles and tests.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(index, coeff)| {
                coeff
                    * index
                        .iter()
                        .zip(x)
                        .map(|(&k, v)| v.powi(k as i32))
                        .product::<f64>()
            })
            .sum()
    }
}

/// Single-shot estimate with explicit draw and cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectEstimate {
    pub value: f64,
    pub n_draws: u64,
    pub cost: u64,
}

/// Unbiased one-shot estimator of a polynomial in the subroutine mean.
///
/// Draws `degree` i.i.d. samples once. Each monomial multiplies coordinates
/// taken from disjoint blocks of those samples (coordinate `b`'s power `k_b`
/// uses `k_b` fresh samples), so every factor in the product is independent
/// and the expectation factorizes into the monomial of the means.
pub fn polynomial_estimator(
    poly: &MultiIndexPoly,
    sub: &dyn Subroutine,
    rng: &mut RngStream,
) -> Result<DirectEstimate> {
    if sub.dim() != poly.arity {
        return Err(Error::DimensionMismatch {
            expected: poly.arity,
            got: sub.dim(),
        });
    }
    let n = poly.degree as u64;
    let mut draws = Vec::with_capacity(n as usize);
    let mut cost = 0u64;
    for _ in 0..n {
        let s = sub.draw(rng)?;
        cost += s.cost;
        draws.push(s.value);
    }
    let mut value = 0.0;
    for (index, coeff) in &poly.terms {
        let mut term = *coeff;
        let mut offset = 0usize;
        for (b, &k) in index.iter().enumerate() {
            for j in 0..k as usize {
                term *= draws[offset + j][b];
            }
            offset += k as usize;
        }
        value += term;
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    Ok(DirectEstimate {
        value,
        n_draws: n,
        cost,
    })
}

/// Coefficients `a_n` of a series `sum_n a_n (x - center)^n`.
pub struct PowerSeries {
    pub center: f64,
    pub coeff: Box<dyn Fn(u64) -> f64 + Send + Sync>,
    pub label: String,
}

/// Randomization law for the series order. The caller must pick a law whose
/// support covers every order with a nonzero coefficient.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelLaw {
    /// Poisson(lambda) on {0, 1, ...}.
    Poisson(f64),
    /// Geometric on {0, 1, ...} counting failures: pmf p(1-p)^n.
    Geometric(f64),
    /// Deterministic order.
    PointMass(u64),
}

impl LevelLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            LevelLaw::Poisson(lambda) if !(lambda > &0.0 && lambda.is_finite()) => {
                Err(Error::InvalidParam {
                    name: "lambda",
                    message: format!("Poisson rate must be positive and finite, got {lambda}"),
                })
            }
            LevelLaw::Geometric(p) if !(p > &0.0 && p < &1.0) => Err(Error::InvalidParam {
                name: "p",
                message: format!("geometric parameter must lie in (0, 1), got {p}"),
            }),
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> u64 {
        match self {
            LevelLaw::Poisson(lambda) => rng.poisson(*lambda),
            LevelLaw::Geometric(p) => rng.geometric(*p) - 1,
            LevelLaw::PointMass(k) => *k,
        }
    }

    pub fn pmf(&self, n: u64) -> f64 {
        match self {
            LevelLaw::Poisson(lambda) => {
                let mut p = (-lambda).exp();
                for i in 1..=n {
                    p *= lambda / i as f64;
                }
                p
            }
            LevelLaw::Geometric(p) => p * (1.0 - p).powi(n as i32),
            LevelLaw::PointMass(k) => {
                if *k == n {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Unbiased single-term estimator of `sum_n a_n (m(pi) - center)^n` for a
/// scalar subroutine: draw an order from the level law, take that many fresh
/// samples, and return `(a_N / q_N) * prod_j (H_j - center)`.
pub fn power_series_estimator(
    series: &PowerSeries,
    law: &LevelLaw,
    sub: &dyn Subroutine,
    rng: &mut RngStream,
) -> Result<DirectEstimate> {
    law.validate()?;
    if sub.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: sub.dim(),
        });
    }
    let n = law.sample(rng);
    let q = law.pmf(n);
    let a = (series.coeff)(n);
    let mut value = a / q;
    let mut cost = 0u64;
    if a == 0.0 {
        // The weighted product is zero regardless of the draws; skip them.
        value = 0.0;
    } else {
        for _ in 0..n {
            let s = sub.draw(rng)?;
            cost += s.cost;
            value *= s.value[0] - series.center;
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    Ok(DirectEstimate {
        value,
        n_draws: n,
        cost,
    })
}
