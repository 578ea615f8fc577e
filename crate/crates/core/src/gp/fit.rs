use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::Dataset;
use super::kernel::TaskCoupling;
use super::posterior::GpPosterior;
use crate::error::{invalid, Result};
use crate::lvgp::{HyperparameterBounds, Hyperparameters, ParamBound};
use crate::optim::{minimize_bounded, LbfgsOptions};

/// Settings for [`fit_mle`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Total number of local ascents; the first starts from the supplied
    /// hyperparameters, the rest from random draws.
    pub restarts: usize,
    pub seed: u64,
    pub bounds: HyperparameterBounds,
    /// Domain widths used to scale random initial lengthscales.
    pub widths: Vec<f64>,
    pub lbfgs: LbfgsOptions,
}

impl FitOptions {
    pub fn new(widths: &[f64], restarts: usize, seed: u64) -> Self {
        Self {
            restarts,
            seed,
            bounds: HyperparameterBounds::for_widths(widths),
            widths: widths.to_vec(),
            lbfgs: LbfgsOptions {
                max_iterations: 100,
                ..LbfgsOptions::default()
            },
        }
    }
}

/// Result of [`fit_mle`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub hyperparameters: Hyperparameters,
    pub log_likelihood: f64,
    /// False when no restart beat the initial hyperparameters; the initial
    /// values are then returned unchanged.
    pub improved: bool,
    pub failed_restarts: usize,
}

/// Log marginal likelihood and its gradient with respect to the packed
/// (natural-unit) hyperparameters.
pub fn log_likelihood_gradient(data: &Dataset, h: &Hyperparameters) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(invalid("likelihood needs a nonempty dataset"));
    }
    let gp = GpPosterior::new(data, &h.kernel, &h.noise)?;
    let lml = gp.log_marginal_likelihood();
    let chol = gp.cholesky().expect("nonempty dataset is factorized");
    let alpha = gp.alpha();
    let mut q = chol.inverse();
    q.neg_mut();
    q.ger(1.0, alpha, alpha, 1.0);

    let kernel = &h.kernel;
    let d = kernel.dim();
    let ls = kernel.lengthscales();
    let zeta2 = kernel.output_scale();
    let points = gp.points();
    let tasks = gp.tasks();
    let n = points.len();
    let num_free = h.num_free();
    let mut grad = vec![0.0; num_free];

    let (latent_m, latent_len) = match kernel.coupling() {
        TaskCoupling::Latent(e) => (e.latent_dim(), (e.num_tasks() - 1) * e.latent_dim()),
        _ => (0, 0),
    };
    let scale_at = d + latent_len;
    let noise_at = num_free - h.noise.num_tasks();

    for i in 0..n {
        for j in 0..=i {
            let w = if i == j { 0.5 * q[(i, j)] } else { q[(i, j)] };
            if w == 0.0 {
                continue;
            }
            let (a, b) = (&points[i], &points[j]);
            let (ta, tb) = (tasks[i], tasks[j]);
            let s = kernel.radial(a, b);
            let (scale, _) = kernel.task_factors(ta, tb);
            for k in 0..d {
                let delta = a[k] - b[k];
                grad[k] += w * scale * s * delta * delta / (ls[k] * ls[k] * ls[k]);
            }
            grad[scale_at] += w * scale * s / zeta2;
            match kernel.coupling() {
                TaskCoupling::Single => {}
                TaskCoupling::Latent(e) => {
                    if ta != tb {
                        let za = &e.coords()[ta];
                        let zb = &e.coords()[tb];
                        for c in 0..latent_m {
                            let dz = -2.0 * (za[c] - zb[c]) * scale * s * w;
                            if ta > 0 {
                                grad[d + (ta - 1) * latent_m + c] += dz;
                            }
                            if tb > 0 {
                                grad[d + (tb - 1) * latent_m + c] -= dz;
                            }
                        }
                    }
                }
                TaskCoupling::Mixture {
                    lambda,
                    categorical_scale,
                    ..
                } => {
                    let ind = if ta == tb { 1.0 } else { 0.0 };
                    let sigma = *categorical_scale;
                    grad[scale_at + 1] += w * ((-1.0 + sigma * ind) * s - sigma * ind);
                    grad[scale_at + 2] += w * (lambda * ind * s + (1.0 - lambda) * ind);
                }
            }
            if i == j {
                grad[noise_at + ta.min(h.noise.num_tasks() - 1)] += w;
            }
        }
    }
    Ok((lml, grad))
}

fn to_search(v: f64, b: &ParamBound) -> f64 {
    if b.log_scale {
        v.ln()
    } else {
        v
    }
}

fn from_search(u: f64, b: &ParamBound) -> f64 {
    if b.log_scale {
        u.exp().clamp(b.lower, b.upper)
    } else {
        u
    }
}

fn random_start(template: &Hyperparameters, opts: &FitOptions, restart: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(restart as u64);
    let mut v = Vec::with_capacity(template.num_free());
    for w in &opts.widths {
        v.push(w * rng.random_range(0.05f64.ln()..1.0f64.ln()).exp());
    }
    if let TaskCoupling::Latent(e) = template.kernel.coupling() {
        for _ in 0..(e.num_tasks() - 1) * e.latent_dim() {
            let z: f64 = StandardNormal.sample(&mut rng);
            v.push(0.5 * z);
        }
    }
    v.push(rng.random_range(0.5f64.ln()..2.0f64.ln()).exp());
    if let TaskCoupling::Mixture { .. } = template.kernel.coupling() {
        v.push(rng.random_range(0.0..1.0));
        v.push(rng.random_range(0.5f64.ln()..2.0f64.ln()).exp());
    }
    for _ in 0..template.noise.num_tasks() {
        v.push(rng.random_range(1e-6f64.ln()..1e-2f64.ln()).exp());
    }
    v
}

struct Ascent {
    params: Vec<f64>,
    lml: f64,
}

fn ascend(data: &Dataset, template: &Hyperparameters, start: &[f64], bounds: &[ParamBound], opts: &LbfgsOptions) -> Option<Ascent> {
    let lower: Vec<f64> = bounds.iter().map(|b| to_search(b.lower, b)).collect();
    let upper: Vec<f64> = bounds.iter().map(|b| to_search(b.upper, b)).collect();
    let u0: Vec<f64> = start
        .iter()
        .zip(bounds)
        .map(|(v, b)| to_search(v.clamp(b.lower, b.upper), b))
        .collect();
    let natural = |u: &[f64]| -> Vec<f64> { u.iter().zip(bounds).map(|(x, b)| from_search(*x, b)).collect() };
    let objective = |u: &[f64]| {
        let theta = natural(u);
        let h = template.unpack_trusted(&theta);
        let (lml, g) = log_likelihood_gradient(data, &h).ok()?;
        if !lml.is_finite() {
            return None;
        }
        let gu = g
            .iter()
            .zip(&theta)
            .zip(bounds)
            .map(|((gi, t), b)| if b.log_scale { -gi * t } else { -gi })
            .collect();
        Some((-lml, gu))
    };
    let m = minimize_bounded(objective, &u0, &lower, &upper, opts)?;
    Some(Ascent {
        params: natural(&m.x),
        lml: -m.value,
    })
}

/// Maximizes the log marginal likelihood over kernel and noise
/// hyperparameters by multi-start projected L-BFGS in log-parameter space.
///
/// The result is the best restart (ties go to the lowest restart index), so
/// it does not depend on how restarts are scheduled across threads. Level 0
/// of a latent embedding is never a free parameter and stays at the origin.
pub fn fit_mle(data: &Dataset, init: &Hyperparameters, opts: &FitOptions) -> Result<FitOutcome> {
    if data.is_empty() {
        return Err(invalid("cannot fit hyperparameters to an empty dataset"));
    }
    if opts.restarts == 0 {
        return Err(invalid("fit_mle needs at least one restart"));
    }
    if opts.widths.len() != init.kernel.dim() {
        return Err(invalid("domain widths do not match the kernel dimension"));
    }
    let bounds = init.bounds(&opts.bounds)?;
    let init_lml = GpPosterior::new(data, &init.kernel, &init.noise)
        .map(|gp| gp.log_marginal_likelihood())
        .unwrap_or(f64::NEG_INFINITY);

    let run = |r: usize| {
        let start = if r == 0 {
            init.pack()
        } else {
            random_start(init, opts, r)
        };
        ascend(data, init, &start, &bounds, &opts.lbfgs)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Option<Ascent>> = {
        use rayon::prelude::*;
        (0..opts.restarts).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Option<Ascent>> = (0..opts.restarts).map(run).collect();

    let failed_restarts = results.iter().filter(|r| r.is_none()).count();
    let best = results
        .into_iter()
        .flatten()
        .fold(None::<Ascent>, |best, a| match best {
            Some(b) if b.lml >= a.lml => Some(b),
            _ => Some(a),
        });
    match best {
        Some(b) if b.lml > init_lml => Ok(FitOutcome {
            hyperparameters: init.unpack(&b.params)?,
            log_likelihood: b.lml,
            improved: true,
            failed_restarts,
        }),
        _ => {
            warn!("hyperparameter fit did not improve on the initial values");
            Ok(FitOutcome {
                hyperparameters: init.clone(),
                log_likelihood: init_lml,
                improved: false,
                failed_restarts,
            })
        }
    }
}
