//! Single-output Gaussian process regression over `(x, task)` inputs:
//! exact posterior inference, posterior beliefs about the gradient in `x`,
//! and maximum-likelihood hyperparameter fitting.
//!
//! All functions here assume a zero prior mean. Callers that want a
//! data-dependent mean standardize targets first (see [`Standardization`]).

mod data;
mod fit;
mod kernel;
mod posterior;

pub use data::{Dataset, NoiseModel, Observation, Standardization, DEFAULT_JITTER};
pub use fit::{fit_mle, log_likelihood_gradient, FitOptions, FitOutcome};
pub use kernel::{Kernel, TaskCoupling};
pub use posterior::{gradient_belief, log_marginal_likelihood, posterior, GpPosterior, GradientBelief};
