//! Markov transition kernels and faithful couplings of them.
//!
//! A [`CoupledKernel`] advances two chains jointly so that (a) each coordinate
//! of the joint step is marginally one step of the underlying kernel, (b) the
//! chains have positive probability of landing on exactly equal states, and
//! (c) equality is absorbing: once met, the pair moves as one chain forever.
//! Meeting is exact state equality, never a distance threshold.
//!
//! [`CoupledChainPair`] tracks the lagged pair `(Y_t, Z_{t-1})` used by the
//! bias-corrected estimator in [`crate::joa`]: `Y` is initialized one kernel
//! step ahead of `Z`, and the meeting time `tau` is the first `t` with
//! `Y_t = Z_{t-1}`.

pub mod finite;
pub mod ising;
pub mod rwmh;

pub use finite::{stationary_distribution, FiniteKernel};
pub use ising::IsingGibbsKernel;
pub use rwmh::RwMhKernel;

use crate::error::Result;
use crate::rng::RngStream;

/// One-step Markov transition on a state type.
pub trait MarkovKernel: Send + Sync {
    type State: Clone + PartialEq + Send + Sync + std::fmt::Debug;

    /// Dimension of the state (coordinates for vector states, sites for
    /// lattice states, 1 for finite chains).
    fn dim(&self) -> usize;

    fn label(&self) -> &str;

    /// Draw one transition from `state`.
    fn step(&self, state: &Self::State, rng: &mut RngStream) -> Result<Self::State>;

    /// Reject states the kernel cannot act on (wrong length, bad values).
    fn validate_state(&self, _state: &Self::State) -> Result<()> {
        Ok(())
    }
}

/// Joint transition whose coordinates are marginally [`MarkovKernel::step`]
/// and which preserves equality of its arguments.
pub trait CoupledKernel: MarkovKernel {
    fn coupled_step(
        &self,
        y: &Self::State,
        z: &Self::State,
        rng: &mut RngStream,
    ) -> Result<(Self::State, Self::State)>;
}

/// The lagged pair `(Y_t, Z_{t-1})` with meeting bookkeeping.
#[derive(Debug, Clone)]
pub struct CoupledChainPair<S> {
    /// Current `Y_t`.
    pub y_state: S,
    /// Current `Z_{t-1}`.
    pub z_state: S,
    /// Time index of `Y`; starts at 1.
    pub t: u64,
    /// Whether the chains have met.
    pub met: bool,
    /// First `t` with `Y_t = Z_{t-1}`, once observed.
    pub tau: Option<u64>,
}

impl<S: Clone + PartialEq> CoupledChainPair<S> {
    /// Start a pair from explicit draws: `Y_0 = y0`, `Z_0 = z0`, then advance
    /// `Y` one marginal step so the pair sits at `(Y_1, Z_0)`.
    pub fn from_initial_states<K>(
        kernel: &K,
        y0: S,
        z0: S,
        rng: &mut RngStream,
    ) -> Result<Self>
    where
        K: CoupledKernel<State = S>,
    {
        kernel.validate_state(&y0)?;
        kernel.validate_state(&z0)?;
        let y1 = kernel.step(&y0, rng)?;
        let met = y1 == z0;
        Ok(CoupledChainPair {
            y_state: y1,
            z_state: z0,
            t: 1,
            met,
            tau: if met { Some(1) } else { None },
        })
    }

    /// Start a pair with both chains drawn independently from `pi0`.
    pub fn init<K>(
        kernel: &K,
        pi0: &(dyn Fn(&mut RngStream) -> S + Send + Sync),
        rng: &mut RngStream,
    ) -> Result<Self>
    where
        K: CoupledKernel<State = S>,
    {
        let y0 = pi0(rng);
        let z0 = pi0(rng);
        Self::from_initial_states(kernel, y0, z0, rng)
    }

    /// Advance the pair one coupled step: `(Y_t, Z_{t-1}) -> (Y_{t+1}, Z_t)`.
    ///
    /// Once met, both coordinates take the identical marginal step, which keeps
    /// equality absorbing without relying on the coupling's arithmetic.
    pub fn step<K>(&mut self, kernel: &K, rng: &mut RngStream) -> Result<()>
    where
        K: CoupledKernel<State = S>,
    {
        if self.met {
            let next = kernel.step(&self.y_state, rng)?;
            self.y_state = next.clone();
            self.z_state = next;
        } else {
            let (y, z) = kernel.coupled_step(&self.y_state, &self.z_state, rng)?;
            self.y_state = y;
            self.z_state = z;
        }
        self.t += 1;
        if !self.met && self.y_state == self.z_state {
            self.met = true;
            self.tau = Some(self.t);
        }
        Ok(())
    }
}
