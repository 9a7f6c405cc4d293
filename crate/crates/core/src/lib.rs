//! Sampling a Wiener process for remote estimation over a queue.
//!
//! A sampler observes `W_t` and decides when to send samples through a FIFO
//! server with i.i.d. service times `Y_i`. The estimator holds the freshest
//! delivered value. This crate provides
//!
//! - service-time laws and their moments ([`service`]),
//! - the Gaussian kernels behind the optimal thresholds ([`moments`]),
//! - bisection solvers for the signal-aware and age-optimal thresholds ([`solver`]),
//! - a discrete-time closed-loop simulator and Monte Carlo identity checks ([`sim`]),
//! - parameter sweeps, CSV output and validation suites ([`experiment`]).
//!
//! ```
//! use remoteest::{solve_signal_threshold, RateLimit, ServiceDistribution};
//!
//! let y = ServiceDistribution::deterministic(0.0).unwrap();
//! let sol = solve_signal_threshold(&y, RateLimit::Finite(2.0)).unwrap();
//! assert!((sol.beta - 0.5).abs() < 1e-12);
//! assert!((sol.mse - 1.0 / 12.0).abs() < 1e-12);
//! ```

pub mod error;
pub mod experiment;
pub mod moments;
pub mod quadrature;
pub mod rng;
pub mod service;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use moments::{gauss_kernel_max2, gauss_kernel_max4, MomentFunctionals};
pub use service::ServiceDistribution;
pub use sim::{simulate_policy, PolicySpec, SimConfig, SimResult};
pub use solver::{
    solve_age_threshold, solve_signal_threshold, solve_threshold, zero_wait_age_optimal,
    zero_wait_mse_optimal, PolicyKind, RateLimit, ThresholdSolution,
};

// Keeps the guide's code blocks compiling and passing.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/service-models.md")]
    mod service_models {}
    #[doc = include_str!("../../../book/src/moment-kernels.md")]
    mod moment_kernels {}
    #[doc = include_str!("../../../book/src/thresholds.md")]
    mod thresholds {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/identities.md")]
    mod identities {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
