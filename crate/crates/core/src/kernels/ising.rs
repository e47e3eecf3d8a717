//! Single-site Gibbs sampler for the torus Ising model, coupled by common
//! random numbers.
//!
//! One kernel step is a full raster-order sweep: each site is refreshed from
//! its conditional p(sigma_i = +1 | rest) = 1 / (1 + exp(-2 theta s_i)),
//! where s_i is the sum of the four neighboring spins. The coupled step
//! reuses one uniform per site across both chains. The conditional is
//! monotone in s_i (for theta >= 0), so with shared uniforms an ordered pair
//! of configurations stays ordered and the chains coalesce site by site.

use crate::error::{Error, Result};
use crate::kernels::{CoupledKernel, MarkovKernel};
use crate::models::ising::IsingState;
use crate::rng::RngStream;

/// Gibbs sweep kernel; holds the neighbor table and the five possible
/// conditional probabilities (neighbor sums are in {-4, -2, 0, 2, 4}).
pub struct IsingGibbsKernel {
    n: usize,
    theta: f64,
    neighbors: Vec<[usize; 4]>,
    prob_plus: [f64; 5],
    label: String,
}

impl IsingGibbsKernel {
    pub fn new(n: usize, theta: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParam {
                name: "n",
                message: format!("lattice side must be at least 2, got {n}"),
            });
        }
        if !theta.is_finite() {
            return Err(Error::InvalidParam {
                name: "theta",
                message: format!("inverse temperature must be finite, got {theta}"),
            });
        }
        let mut neighbors = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                neighbors.push([
                    row * n + (col + 1) % n,
                    row * n + (col + n - 1) % n,
                    ((row + 1) % n) * n + col,
                    ((row + n - 1) % n) * n + col,
                ]);
            }
        }
        let mut prob_plus = [0.0; 5];
        for (i, p) in prob_plus.iter_mut().enumerate() {
            let s = (2 * i) as f64 - 4.0;
            *p = 1.0 / (1.0 + (-2.0 * theta * s).exp());
        }
        Ok(IsingGibbsKernel {
            n,
            theta,
            neighbors,
            prob_plus,
            label: format!("ising-gibbs n={n} theta={theta}"),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Conditional probability that a site is +1 given its neighbor sum.
    fn conditional_plus(&self, neighbor_sum: i8) -> f64 {
        // Sums are even in [-4, 4]; index is (s + 4) / 2.
        self.prob_plus[((neighbor_sum + 4) / 2) as usize]
    }

    fn neighbor_sum(&self, spins: &[i8], site: usize) -> i8 {
        let nb = &self.neighbors[site];
        spins[nb[0]] + spins[nb[1]] + spins[nb[2]] + spins[nb[3]]
    }
}

impl MarkovKernel for IsingGibbsKernel {
    type State = IsingState;

    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn step(&self, state: &Self::State, rng: &mut RngStream) -> Result<Self::State> {
        let mut next = state.clone();
        for site in 0..self.n * self.n {
            let p = self.conditional_plus(self.neighbor_sum(&next.spins, site));
            next.spins[site] = if rng.uniform() < p { 1 } else { -1 };
        }
        Ok(next)
    }

    fn validate_state(&self, state: &Self::State) -> Result<()> {
        if state.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.n,
                got: state.n * state.n,
            });
        }
        state.validate()
    }
}

impl CoupledKernel for IsingGibbsKernel {
    fn coupled_step(
        &self,
        y: &Self::State,
        z: &Self::State,
        rng: &mut RngStream,
    ) -> Result<(Self::State, Self::State)> {
        let mut y_next = y.clone();
        let mut z_next = z.clone();
        for site in 0..self.n * self.n {
            let u = rng.uniform();
            let py = self.conditional_plus(self.neighbor_sum(&y_next.spins, site));
            let pz = self.conditional_plus(self.neighbor_sum(&z_next.spins, site));
            y_next.spins[site] = if u < py { 1 } else { -1 };
            z_next.spins[site] = if u < pz { 1 } else { -1 };
        }
        Ok((y_next, z_next))
    }
}
