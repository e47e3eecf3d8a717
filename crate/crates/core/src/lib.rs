//! Unbiased estimation of functions of expectations, `g(E[X])`, for targets that
//! are only reachable through MCMC.
//!
//! The pipeline has three layers:
//!
//! 1. [`joa`] produces unbiased samples of a posterior expectation from a pair of
//!    coupled Markov chains (sweep-coupled Gibbs or reflection-coupled
//!    random-walk Metropolis from [`kernels`]).
//! 2. [`mlmc`] removes the nonlinearity bias of `g` applied to sample means with
//!    a randomized multilevel scheme: a geometric level `N`, `2^N` subroutine
//!    calls, and an antithetic odd/even difference whose expectation telescopes
//!    to `g(E[X]) - E[g(X_1)]`.
//! 3. [`harness`] runs replications over deterministic per-replication RNG
//!    streams, aggregates confidence intervals, and compares against plug-in
//!    MCMC under matched compute budgets.
//!
//! [`models`] wires these pieces into the shipped targets (Beta moment products,
//! Ising partition-function ratios and natural-statistic reciprocals, and a
//! nested cut-model posterior). [`nested`] handles two-stage targets
//! `E_x[g_x(E[φ(x,·)|x])]` by drawing the outer variable first and running one
//! inner estimate per draw.
//!
//! Everything downstream of a fixed `(seed, stream_id)` is deterministic, so
//! full runs reproduce bit-for-bit regardless of thread count.

pub mod error;
pub mod harness;
pub mod joa;
pub mod kernels;
pub mod mlmc;
pub mod models;
pub mod nested;
pub mod rng;

pub use error::{Error, Result};
pub use joa::{sample_joa, JoaConfig, JoaParams, UnbiasedSample};
pub use mlmc::{
    antithetic_delta, delta_transform, mlmc_estimate, recommended_p, FnSubroutine, GFunction,
    MlmcConfig, MlmcEstimate, StackedSubroutine, Subroutine,
};
pub use nested::{nested_estimate, InnerProblem, NestedEstimate, NestedSpec};
pub use rng::RngStream;
