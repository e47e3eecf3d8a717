//! Unbiased estimation of a stationary expectation `E_pi[f]` from one coupled
//! chain pair.
//!
//! A trajectory starts with `Y_0, Z_0` drawn independently from `pi0` and `Y`
//! advanced one marginal step; thereafter the lagged pair `(Y_t, Z_{t-1})`
//! moves under the coupled kernel until it has both met and passed the
//! averaging window, that is until `t = max(tau, m_avg + 1)`. The estimate is
//!
//! ```text
//! (m - k + 1)^-1 * [ sum_{l=k..m} f(Y_l)
//!                    + sum_{t=k+1..tau-1} min(m-k+1, t-k) (f(Y_t) - f(Z_{t-1})) ]
//! ```
//!
//! with `m = m_avg`. The correction sum is empty when `tau <= k + 1`, in which
//! case the value is the plain ergodic average over `Y_k..Y_m`. Unbiasedness
//! holds for every `k` and `m >= k`; those knobs trade cost against variance.

use crate::error::{Error, Result};
use crate::kernels::{CoupledChainPair, CoupledKernel};
use crate::rng::RngStream;

/// One draw of the coupled-pair estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasedSample {
    /// Estimate of `E_pi[f]`, one entry per component of `f`.
    pub value: Vec<f64>,
    /// Coupled steps consumed: `max(tau, m_avg + 1)`.
    pub cost: u64,
    /// First `t` with `Y_t = Z_{t-1}`; at least 1.
    pub tau: u64,
}

/// Burn-in, averaging window, and safety cap for one coupled trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoaParams {
    /// Burn-in index `k`; the ergodic average starts at `Y_k`.
    pub k: u64,
    /// Upper averaging index `m >= k`; the average runs over `Y_k..Y_m`.
    pub m_avg: u64,
    /// Hard cap on the time index; an unmet pair at this `t` is a counted
    /// replication error, never a truncated estimate.
    pub max_steps: u64,
}

impl JoaParams {
    pub fn validate(&self) -> Result<()> {
        if self.m_avg < self.k {
            return Err(Error::InvalidParam {
                name: "m_avg",
                message: format!(
                    "averaging window must satisfy m_avg >= k, got m_avg = {} < k = {}",
                    self.m_avg, self.k
                ),
            });
        }
        if self.max_steps <= self.m_avg {
            return Err(Error::InvalidParam {
                name: "max_steps",
                message: format!(
                    "cap must exceed m_avg (trajectories run to m_avg + 1), got {} <= {}",
                    self.max_steps, self.m_avg
                ),
            });
        }
        Ok(())
    }
}

/// Everything needed to draw [`UnbiasedSample`]s: the coupled kernel, the
/// initial law, the test function, and the window parameters.
pub struct JoaConfig<K: CoupledKernel> {
    pub kernel: K,
    pub pi0: Box<dyn Fn(&mut RngStream) -> K::State + Send + Sync>,
    pub f: Box<dyn Fn(&K::State) -> Vec<f64> + Send + Sync>,
    /// Output dimension of `f`; checked against every evaluation.
    pub f_dim: usize,
    pub params: JoaParams,
}

impl<K: CoupledKernel> JoaConfig<K> {
    pub fn new(
        kernel: K,
        pi0: Box<dyn Fn(&mut RngStream) -> K::State + Send + Sync>,
        f: Box<dyn Fn(&K::State) -> Vec<f64> + Send + Sync>,
        f_dim: usize,
        params: JoaParams,
    ) -> Result<Self> {
        if f_dim == 0 {
            return Err(Error::InvalidParam {
                name: "f_dim",
                message: "test function must have at least one component".into(),
            });
        }
        params.validate()?;
        Ok(JoaConfig {
            kernel,
            pi0,
            f,
            f_dim,
            params,
        })
    }

    fn eval_f(&self, state: &K::State) -> Result<Vec<f64>> {
        let v = (self.f)(state);
        if v.len() != self.f_dim {
            return Err(Error::DimensionMismatch {
                expected: self.f_dim,
                got: v.len(),
            });
        }
        Ok(v)
    }
}

/// Run one fresh coupled trajectory and return the bias-corrected estimate.
///
/// Fails with [`Error::MeetingCapExceeded`] if the pair reaches
/// `params.max_steps` without meeting; callers count such replications
/// instead of averaging any truncated value.
pub fn sample_joa<K: CoupledKernel>(
    cfg: &JoaConfig<K>,
    rng: &mut RngStream,
) -> Result<UnbiasedSample> {
    let k = cfg.params.k;
    let m = cfg.params.m_avg;
    let width = (m - k + 1) as f64;

    let y0 = (cfg.pi0)(rng);
    let z0 = (cfg.pi0)(rng);
    let mut erg_sum = vec![0.0; cfg.f_dim];
    if k == 0 {
        for (acc, v) in erg_sum.iter_mut().zip(cfg.eval_f(&y0)?) {
            *acc += v;
        }
    }
    let mut corr_sum = vec![0.0; cfg.f_dim];
    let mut pair = CoupledChainPair::from_initial_states(&cfg.kernel, y0, z0, rng)?;

    loop {
        let t = pair.t;
        if t >= k && t <= m {
            for (acc, v) in erg_sum.iter_mut().zip(cfg.eval_f(&pair.y_state)?) {
                *acc += v;
            }
        }
        if !pair.met && t > k {
            // This pair term belongs to every H_l with l in [k, m] and
            // l + 1 <= t, hence the min(m - k + 1, t - k) multiplicity.
            let weight = (m - k + 1).min(t - k) as f64;
            let fy = cfg.eval_f(&pair.y_state)?;
            let fz = cfg.eval_f(&pair.z_state)?;
            for (acc, (y, z)) in corr_sum.iter_mut().zip(fy.iter().zip(&fz)) {
                *acc += weight * (y - z);
            }
        }
        if pair.met && t >= m + 1 {
            break;
        }
        if t >= cfg.params.max_steps {
            return Err(Error::MeetingCapExceeded {
                cap: cfg.params.max_steps,
            });
        }
        pair.step(&cfg.kernel, rng)?;
    }

    let value: Vec<f64> = erg_sum
        .iter()
        .zip(&corr_sum)
        .map(|(e, c)| (e + c) / width)
        .collect();
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue);
    }
    Ok(UnbiasedSample {
        value,
        cost: pair.t,
        tau: pair.tau.expect("loop exits only after meeting"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{stationary_distribution, FiniteKernel, MarkovKernel, RwMhKernel};

    fn three_state() -> (FiniteKernel, Vec<f64>) {
        let rows = vec![
            vec![0.5, 0.3, 0.2],
            vec![0.2, 0.6, 0.2],
            vec![0.3, 0.3, 0.4],
        ];
        let pi = stationary_distribution(&rows).unwrap();
        (FiniteKernel::new(rows, "three-state").unwrap(), pi)
    }

    fn indicator_cfg(k: u64, m_avg: u64) -> JoaConfig<FiniteKernel> {
        let (kernel, _) = three_state();
        JoaConfig::new(
            kernel,
            Box::new(|rng: &mut RngStream| if rng.uniform() < 0.5 { 0 } else { 2 }),
            Box::new(|s: &usize| vec![if *s == 1 { 1.0 } else { 0.0 }]),
            1,
            JoaParams {
                k,
                m_avg,
                max_steps: 10_000,
            },
        )
        .unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(JoaParams {
            k: 3,
            m_avg: 2,
            max_steps: 100
        }
        .validate()
        .is_err());
        assert!(JoaParams {
            k: 0,
            m_avg: 10,
            max_steps: 10
        }
        .validate()
        .is_err());
        assert!(JoaParams {
            k: 0,
            m_avg: 0,
            max_steps: 1
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn rejects_zero_dim_f() {
        let (kernel, _) = three_state();
        let r = JoaConfig::new(
            kernel,
            Box::new(|_rng: &mut RngStream| 0),
            Box::new(|_s: &usize| vec![]),
            0,
            JoaParams {
                k: 0,
                m_avg: 0,
                max_steps: 10,
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn f_dim_mismatch_is_caught() {
        let (kernel, _) = three_state();
        let cfg = JoaConfig::new(
            kernel,
            Box::new(|_rng: &mut RngStream| 0),
            Box::new(|_s: &usize| vec![1.0]),
            2,
            JoaParams {
                k: 0,
                m_avg: 0,
                max_steps: 10,
            },
        )
        .unwrap();
        let mut rng = RngStream::new(5, 0);
        assert!(matches!(
            sample_joa(&cfg, &mut rng),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    /// Kernel that moves to a common point immediately, so tau = 1 always.
    struct CollapseKernel;

    impl MarkovKernel for CollapseKernel {
        type State = Vec<f64>;
        fn dim(&self) -> usize {
            1
        }
        fn label(&self) -> &str {
            "collapse"
        }
        fn step(&self, _state: &Vec<f64>, _rng: &mut RngStream) -> Result<Vec<f64>> {
            Ok(vec![7.0])
        }
    }

    impl CoupledKernel for CollapseKernel {
        fn coupled_step(
            &self,
            y: &Vec<f64>,
            _z: &Vec<f64>,
            rng: &mut RngStream,
        ) -> Result<(Vec<f64>, Vec<f64>)> {
            let next = self.step(y, rng)?;
            Ok((next.clone(), next))
        }
    }

    #[test]
    fn tau_one_with_k_zero_returns_single_draw() {
        // pi0 is the point mass at 7, the kernel jumps straight to 7, so the
        // pair meets at t = 1 and the estimate is exactly f(Y_0) at cost 1.
        let cfg = JoaConfig::new(
            CollapseKernel,
            Box::new(|_rng: &mut RngStream| vec![7.0]),
            Box::new(|s: &Vec<f64>| vec![3.0 * s[0]]),
            1,
            JoaParams {
                k: 0,
                m_avg: 0,
                max_steps: 50,
            },
        )
        .unwrap();
        let mut rng = RngStream::new(6, 0);
        for _ in 0..100 {
            let s = sample_joa(&cfg, &mut rng).unwrap();
            assert_eq!(s.tau, 1);
            assert_eq!(s.cost, 1);
            assert_eq!(s.value, vec![21.0]);
        }
    }

    #[test]
    fn cost_is_max_of_tau_and_window() {
        let cfg = indicator_cfg(2, 9);
        let mut rng = RngStream::new(7, 0);
        for _ in 0..500 {
            let s = sample_joa(&cfg, &mut rng).unwrap();
            assert_eq!(s.cost, s.tau.max(10));
        }
    }

    #[test]
    fn meeting_cap_is_an_error() {
        // An identity coupling started from two distinct points never meets,
        // so the cap must fire.
        struct NeverMeet;
        impl MarkovKernel for NeverMeet {
            type State = Vec<f64>;
            fn dim(&self) -> usize {
                1
            }
            fn label(&self) -> &str {
                "never-meet"
            }
            fn step(&self, state: &Vec<f64>, _rng: &mut RngStream) -> Result<Vec<f64>> {
                Ok(vec![state[0]])
            }
        }
        impl CoupledKernel for NeverMeet {
            fn coupled_step(
                &self,
                y: &Vec<f64>,
                z: &Vec<f64>,
                _rng: &mut RngStream,
            ) -> Result<(Vec<f64>, Vec<f64>)> {
                Ok((y.clone(), z.clone()))
            }
        }
        let cfg = JoaConfig::new(
            NeverMeet,
            Box::new(|rng: &mut RngStream| vec![rng.uniform()]),
            Box::new(|s: &Vec<f64>| vec![s[0]]),
            1,
            JoaParams {
                k: 0,
                m_avg: 0,
                max_steps: 25,
            },
        )
        .unwrap();
        let mut rng = RngStream::new(8, 0);
        assert!(matches!(
            sample_joa(&cfg, &mut rng),
            Err(Error::MeetingCapExceeded { cap: 25 })
        ));
    }

    #[test]
    fn finite_kernel_indicator_matches_stationary_mass() {
        // k = m_avg = 0 exercises the full correction sum.
        let (_, pi) = three_state();
        let cfg = indicator_cfg(0, 0);
        let mut rng = RngStream::new(9, 0);
        let reps = 200_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let s = sample_joa(&cfg, &mut rng).unwrap();
            sum += s.value[0];
            sum_sq += s.value[0] * s.value[0];
        }
        let mean = sum / reps as f64;
        let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - pi[1]).abs() < 3.0 * se,
            "mean {mean} vs pi(1) {} (se {se})",
            pi[1]
        );
    }

    #[test]
    fn time_averaging_reduces_variance_and_keeps_mean() {
        let (_, pi) = three_state();
        let mut rng = RngStream::new(10, 0);
        let reps = 60_000u64;
        let mut stats = Vec::new();
        for (k, m_avg) in [(0u64, 0u64), (2, 20)] {
            let cfg = indicator_cfg(k, m_avg);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..reps {
                let s = sample_joa(&cfg, &mut rng).unwrap();
                sum += s.value[0];
                sum_sq += s.value[0] * s.value[0];
            }
            let mean = sum / reps as f64;
            let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
            stats.push((mean, var));
            let se = (var / reps as f64).sqrt();
            assert!(
                (mean - pi[1]).abs() < 3.5 * se,
                "window ({k},{m_avg}): mean {mean} vs {} (se {se})",
                pi[1]
            );
        }
        assert!(
            stats[1].1 < stats[0].1 / 2.0,
            "averaging window failed to cut variance: {stats:?}"
        );
    }

    #[test]
    fn beta_target_via_rwmh_matches_moment() {
        // Beta(i, 1) has mean i / (i + 1); check i = 2 through the coupled
        // random-walk chain with a modest averaging window.
        let i = 2.0;
        let kernel = RwMhKernel::new(
            1,
            0.5,
            Box::new(move |x: &[f64]| {
                if x[0] > 0.0 && x[0] < 1.0 {
                    (i - 1.0) * x[0].ln()
                } else {
                    f64::NEG_INFINITY
                }
            }),
            "beta(2,1) walk",
        )
        .unwrap();
        let cfg = JoaConfig::new(
            kernel,
            Box::new(|rng: &mut RngStream| vec![rng.uniform()]),
            Box::new(|s: &Vec<f64>| vec![s[0]]),
            1,
            JoaParams {
                k: 5,
                m_avg: 25,
                max_steps: 50_000,
            },
        )
        .unwrap();
        let mut rng = RngStream::new(11, 0);
        let reps = 20_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let s = sample_joa(&cfg, &mut rng).unwrap();
            sum += s.value[0];
            sum_sq += s.value[0] * s.value[0];
        }
        let mean = sum / reps as f64;
        let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - 2.0 / 3.0).abs() < 3.0 * se,
            "mean {mean} vs 2/3 (se {se})"
        );
    }

    #[test]
    fn fourth_moment_is_stable() {
        // Growing-R fourth moments should settle instead of drifting, which
        // is the practical signature of the moment bound the multilevel
        // stage relies on.
        let cfg = indicator_cfg(0, 4);
        let mut rng = RngStream::new(12, 0);
        let mut values = Vec::new();
        for _ in 0..40_000 {
            values.push(sample_joa(&cfg, &mut rng).unwrap().value[0]);
        }
        let m4 = |v: &[f64]| v.iter().map(|x| x.powi(4)).sum::<f64>() / v.len() as f64;
        let half = m4(&values[..20_000]);
        let full = m4(&values);
        assert!(full.is_finite() && half.is_finite());
        assert!((full - half).abs() < 0.2 * half.max(0.05), "{half} vs {full}");
    }
}
