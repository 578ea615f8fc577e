//! Local Bayesian optimization with multiple information sources.
//!
//! The crate provides derivative-aware Gaussian process inference
//! ([`gp`]), latent-variable multi-task kernels ([`lvgp`]), gradient-entropy
//! acquisition functions with cost awareness ([`acquisition`]), the
//! optimizer drivers built on them plus baselines ([`local_loop`]),
//! benchmark problems ([`benchmarks`]) and a replicated-experiment harness
//! ([`harness`]).

pub mod acquisition;
pub mod benchmarks;
pub mod domain;
pub mod error;
pub mod gp;
pub mod harness;
pub mod local_loop;
pub mod lvgp;
pub mod optim;

pub use domain::Domain;
pub use error::{Error, Result};
