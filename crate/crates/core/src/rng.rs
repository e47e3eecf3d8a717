//! Deterministic, splittable random-number streams.
//!
//! Every replication owns an [`RngStream`] addressed by `(seed, stream_id)`.
//! Streams with the same address reproduce the identical draw sequence
//! bit-for-bit across runs and thread schedules; streams with different ids are
//! statistically independent and cost O(1) to create, so a parallel harness can
//! hand stream `r` to replication `r` without coordination.
//!
//! The generator is ChaCha8 keyed from the seed (expanded through splitmix64)
//! with the 64-bit stream id mapped onto ChaCha's stream counter. Standard
//! distributions delegate to `rand_distr`; the geometric draw is inversion on a
//! single uniform, which keeps the cost-law analysis of the level sampler exact.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Beta, Binomial, Distribution, Normal, Poisson};

/// One addressable random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on [0, 1) with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Geometric draw on {1, 2, ...} with success probability `p`:
    /// P(N = n) = (1-p)^(n-1) p, sampled by inversion ceil(ln U / ln(1-p)).
    ///
    /// Panics if `p` is outside (0, 1).
    pub fn geometric(&mut self, p: f64) -> u64 {
        assert!(
            p > 0.0 && p < 1.0,
            "geometric success probability must lie in (0, 1), got {p}"
        );
        let log_q = (1.0 - p).ln();
        let u = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        // ln u < 0 and ln(1-p) < 0, so the ratio is positive; the max guards
        // the p -> 1 limit where ln(1-p) underflows to -inf.
        ((u.ln() / log_q).ceil() as u64).max(1)
    }

    pub fn standard_normal(&mut self) -> f64 {
        Normal::new(0.0, 1.0).unwrap().sample(&mut self.rng)
    }

    /// Panics if `sd` is negative or non-finite.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        Normal::new(mean, sd)
            .expect("normal requires finite mean and sd >= 0")
            .sample(&mut self.rng)
    }

    /// Panics if `q` is outside [0, 1].
    pub fn bernoulli(&mut self, q: f64) -> bool {
        Bernoulli::new(q)
            .expect("bernoulli probability must lie in [0, 1]")
            .sample(&mut self.rng)
    }

    /// Panics unless both shape parameters are positive and finite.
    pub fn beta(&mut self, a: f64, b: f64) -> f64 {
        Beta::new(a, b)
            .expect("beta shapes must be positive and finite")
            .sample(&mut self.rng)
    }

    /// Panics if `q` is outside [0, 1].
    pub fn binomial(&mut self, n: u64, q: f64) -> u64 {
        Binomial::new(n, q)
            .expect("binomial probability must lie in [0, 1]")
            .sample(&mut self.rng)
    }

    /// Panics unless `lambda` is positive and finite.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        Poisson::new(lambda)
            .expect("poisson rate must be positive and finite")
            .sample(&mut self.rng) as u64
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
