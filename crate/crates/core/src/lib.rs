//! Simulation and inference toolkit for randomized benchmarking (RB) and
//! its derivative protocols.
//!
//! The crate is organized bottom-up:
//!
//! * [`qsim`] builds gate sets, noise channels and SPAM configurations,
//!   computes survival probabilities and simulates binomial datasets.
//! * [`protocols`] encodes the protocols themselves: experiment types,
//!   allowable-sequence samplers and tying functions.
//! * [`dists`] holds the probability toolkit (beta family, beta-binomial,
//!   PAL priors, stick breaking, constrained Dirichlet-process beta mixtures).
//! * [`bayes`] assembles hierarchical log posteriors with exact gradients.
//! * [`sampler`] provides Metropolis-Hastings, NUTS and chain diagnostics.
//! * [`freq`] provides MLE, bootstrap and weighted least-squares baselines.
//! * [`design`] plans sequence re-use via Fisher information and MSE.

pub mod bayes;
pub mod design;
pub mod dists;
pub mod error;
pub mod freq;
pub(crate) mod linalg;
pub mod protocols;
pub mod qsim;
pub mod sampler;

pub use error::{Error, Result};

/// Complex scalar used throughout the simulator.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVector = nalgebra::DVector<C64>;
