//! Bayesian hierarchical modelling of noisy gamma degradation processes.
//!
//! A degradation trace is modelled in three layers: noisy observations
//! `y_i ~ N(z_i, sigma)` of a latent monotone path, latent jumps
//! `dz_i ~ Ga(dt_i / nu^2, 1 / (mu nu^2))` of a stationary gamma process
//! parameterised by its mean rate `mu` and coefficient of variation `nu`,
//! and priors on the parameters. The latent jumps are sampled alongside
//! the parameters, so the likelihood stays conditional and no convolution
//! integrals appear.
//!
//! The crate provides:
//!
//! * [`special`] — self-contained special functions and random samplers,
//! * [`dist`] — the prior distribution families ([`dist::DistSpec`]),
//! * [`process`] — forward simulation and prior predictive generation,
//! * [`model`] — joint log-posterior and analytic gradient for the
//!   no/complete/partial pooling variants,
//! * [`sampler`] — dynamic Hamiltonian Monte Carlo with warmup adaptation
//!   and convergence diagnostics,
//! * [`evaluate`] — filtered-path summaries, cross-validated model
//!   comparison (`elppd`), and failure-time distributions,
//! * [`dataio`] — CSV/JSON persistence for datasets, draws and reports.

pub mod dataio;
pub mod dist;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod process;
pub mod rng;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
pub use rng::RngState;
