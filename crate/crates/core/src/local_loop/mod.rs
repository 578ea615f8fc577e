//! Optimizer drivers that produce [`RunRecord`]s of best-found objective
//! against cumulative query cost.
//!
//! [`run_local`] is the two-loop gradient method: every outer step queries
//! the primary task at the iterate, refits the GP, spends `B` acquisition
//! queries learning about the gradient there and then descends along the
//! posterior-mean gradient. [`run_cages`] and [`run_gibo`] are thin
//! wrappers choosing the acquisition. [`run_ars`] and [`run_logei`] are the
//! gradient-free and global baselines.

mod ars;
mod logei;
mod session;

pub use ars::{ars_gradient, run_ars, ArsConfig};
pub use logei::{log_expected_improvement, run_logei, LOG_EI_FLOOR};
pub use session::{Phase, QueryEvent};

use log::{debug, warn};
use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{optimize_acquisition, AcquisitionKind, AcquisitionSearch, AnchorBelief, Cost, RegionPolicy};
use crate::benchmarks::MisProblem;
use crate::domain::Domain;
use crate::error::{invalid, Result};
use crate::gp::{fit_mle, Dataset, FitOptions, GpPosterior, GradientBelief, Kernel, NoiseModel, Standardization, TaskCoupling};
use crate::lvgp::{Hyperparameters, LatentEmbedding, DEFAULT_LATENT_DIM};
use session::Session;

/// How the gradient estimate is turned into a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientRule {
    /// `x - η g`.
    #[default]
    Plain,
    /// `x - η g / |g|`.
    Normalized,
}

/// Settings shared by all drivers. Budgets are in cost units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    /// Maximum number of outer iterations (descent steps, or global BO
    /// queries for logEI). The run also stops when the budget runs out.
    pub outer_iterations: usize,
    /// Acquisition queries per outer step. `None` means one per dimension.
    pub inner_batch: Option<usize>,
    pub init_budget: f64,
    /// Hard cap on cumulative cost, including initialization.
    pub total_budget: Option<f64>,
    pub seed: u64,
    pub acquisition: AcquisitionKind,
    pub rule: GradientRule,
    pub region: RegionPolicy,
    pub search: AcquisitionSearch,
    /// MLE restarts per refit.
    pub fit_restarts: usize,
    /// L-BFGS iterations per restart.
    pub fit_iterations: usize,
    /// Only the most recent `max_data` observations enter the GP.
    pub max_data: usize,
    pub latent_dim: usize,
    /// Initial lengthscales as a fraction of the domain width.
    pub initial_lengthscale: f64,
    pub ars: ArsConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            outer_iterations: 100,
            inner_batch: None,
            init_budget: 10.0,
            total_budget: None,
            seed: 0,
            acquisition: AcquisitionKind::Cages,
            rule: GradientRule::Plain,
            region: RegionPolicy::default(),
            search: AcquisitionSearch {
                raw_samples: 256,
                starts: 4,
                max_polls: 30,
                min_step: 1e-3,
            },
            fit_restarts: 2,
            fit_iterations: 100,
            max_data: 100,
            latent_dim: DEFAULT_LATENT_DIM,
            initial_lengthscale: 0.3,
            ars: ArsConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(invalid(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.init_budget.is_finite() && self.init_budget >= 0.0) {
            return Err(invalid("initialization budget must be nonnegative"));
        }
        if let Some(b) = self.total_budget {
            if !(b.is_finite() && b > 0.0) {
                return Err(invalid("total budget must be positive"));
            }
        }
        if self.fit_restarts == 0 || self.max_data == 0 || self.latent_dim == 0 {
            return Err(invalid("fit restarts, data window and latent dimension must be positive"));
        }
        if !(self.initial_lengthscale.is_finite() && self.initial_lengthscale > 0.0) {
            return Err(invalid("initial lengthscale must be positive"));
        }
        self.ars.validate()
    }

    pub fn batch(&self, dim: usize) -> usize {
        self.inner_batch.unwrap_or(dim)
    }
}

/// Diagnostics of one outer iteration of [`run_local`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStep {
    pub iteration: usize,
    pub x: Vec<f64>,
    /// Posterior-mean gradient used for the step, in objective units.
    pub gradient: Vec<f64>,
    /// Trace of the gradient covariance before and after the inner loop,
    /// in objective units squared.
    pub trace_before: f64,
    pub trace_after: f64,
    pub inner_tasks: Vec<usize>,
    pub fit_improved: bool,
}

/// Everything one optimizer run did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub events: Vec<QueryEvent>,
    pub steps: Vec<OuterStep>,
    /// Last iterate (or, for logEI, the posterior-mean recommendation).
    pub final_x: Vec<f64>,
    pub total_cost: Cost,
}

impl RunRecord {
    /// Best primary value observed, if any.
    pub fn best(&self) -> Option<f64> {
        self.events.last().and_then(|e| e.best)
    }

    /// Best primary value reached by cumulative cost `budget`.
    pub fn best_at(&self, budget: f64) -> Option<f64> {
        self.events
            .iter()
            .take_while(|e| e.cost.as_f64() <= budget)
            .last()
            .and_then(|e| e.best)
    }

    pub fn count_task(&self, phase: Phase, task: usize) -> usize {
        self.events.iter().filter(|e| e.phase == phase && e.task == task).count()
    }
}

/// `x - η·g` (or `x - η·g/|g|`), projected onto `domain`.
pub fn gradient_step(x: &[f64], belief: &GradientBelief, step_size: f64, rule: GradientRule, domain: &Domain) -> Result<Vec<f64>> {
    if !(step_size.is_finite() && step_size > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    if x.len() != belief.dim() || x.len() != domain.dim() {
        return Err(invalid("iterate, gradient and domain dimensions differ"));
    }
    let g = &belief.mean;
    let factor = match rule {
        GradientRule::Plain => step_size,
        GradientRule::Normalized => {
            let norm = g.norm();
            if !(norm.is_finite() && norm > 0.0) {
                return Ok(x.to_vec());
            }
            step_size / norm
        }
    };
    if g.iter().any(|v| !v.is_finite()) {
        return Err(invalid("gradient has non-finite entries"));
    }
    let mut next: Vec<f64> = x.iter().zip(g.iter()).map(|(xi, gi)| xi - factor * gi).collect();
    domain.clip(&mut next);
    Ok(next)
}

/// Random `(x, task)` pairs among tasks in `tasks` that still fit in the
/// initialization budget, until none fits.
fn initial_design(session: &mut Session<'_>, tasks: &[usize], budget: Cost, rng: &mut ChaCha8Rng) -> Result<()> {
    let costs = session.problem().costs().clone();
    let domain = session.problem().domain().clone();
    let mut spent = Cost::ZERO;
    loop {
        let affordable: Vec<usize> = tasks.iter().copied().filter(|t| spent + costs.cost(*t) <= budget).collect();
        let task = match affordable.len() {
            0 => return Ok(()),
            1 => affordable[0],
            n => affordable[(rng.next_u64() % n as u64) as usize],
        };
        let x = domain.sample(rng);
        if session.query(&x, task, Phase::Init)?.is_none() {
            return Ok(());
        }
        spent += costs.cost(task);
    }
}

/// Starting iterate for single-source drivers: best primary observation, else best on any task, else
/// the domain center.
fn starting_point(data: &Dataset, domain: &Domain) -> Vec<f64> {
    let pick = |primary_only: bool| {
        data.rows()
            .iter()
            .filter(|r| !primary_only || r.task == 0)
            .min_by(|a, b| a.y.total_cmp(&b.y))
            .map(|r| r.x.clone())
    };
    pick(true).or_else(|| pick(false)).unwrap_or_else(|| domain.center())
}

/// Observed input with the lowest predicted primary-task mean, so that
/// cheap-source observations inform where the descent starts.
fn predicted_start(model: &Model, data: &Dataset, config: &OptimizerConfig) -> Option<Vec<f64>> {
    let gp = model.posterior(data, config).ok()?;
    data.rows()
        .iter()
        .filter_map(|r| gp.predict(&r.x, 0).ok().map(|(m, _)| (m, &r.x)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, x)| x.clone())
}

/// Initial hyperparameters: moderate lengthscales, unit output scale and,
/// for several tasks, latent levels placed near (but not at) the origin so
/// the likelihood has a nonzero gradient in the latent coordinates.
fn initial_hyperparameters(domain: &Domain, num_tasks: usize, config: &OptimizerConfig) -> Result<Hyperparameters> {
    let ls: Vec<f64> = domain.widths().iter().map(|w| w * config.initial_lengthscale).collect();
    let coupling = if num_tasks > 1 {
        let m = config.latent_dim;
        let coords = (0..num_tasks)
            .map(|t| {
                let mut z = vec![0.0; m];
                if t > 0 {
                    z[(t - 1) % m] = 0.5 * (1 + (t - 1) / m) as f64;
                }
                z
            })
            .collect();
        TaskCoupling::Latent(LatentEmbedding::from_coords(coords)?)
    } else {
        TaskCoupling::Single
    };
    Ok(Hyperparameters::new(
        Kernel::new(ls, 1.0, coupling)?,
        NoiseModel::uniform(num_tasks, 1e-4)?,
    ))
}

/// GP state refit once per outer step.
struct Model {
    hyper: Hyperparameters,
    standardization: Standardization,
    improved: bool,
}

impl Model {
    fn refit(&mut self, data: &Dataset, config: &OptimizerConfig, domain: &Domain, seed: u64) {
        let window = data.tail(config.max_data);
        self.standardization = Standardization::fit(&window);
        let scaled = window.standardized(&self.standardization);
        let mut opts = FitOptions::new(&domain.widths(), config.fit_restarts, seed);
        opts.lbfgs.max_iterations = config.fit_iterations;
        match fit_mle(&scaled, &self.hyper, &opts) {
            Ok(outcome) => {
                self.improved = outcome.improved;
                self.hyper = outcome.hyperparameters;
            }
            Err(e) => {
                warn!("hyperparameter fit failed, keeping previous values: {e}");
                self.improved = false;
            }
        }
    }

    fn posterior(&self, data: &Dataset, config: &OptimizerConfig) -> Result<GpPosterior> {
        let scaled = data.tail(config.max_data).standardized(&self.standardization);
        GpPosterior::new(&scaled, &self.hyper.kernel, &self.hyper.noise)
    }
}

/// The two-loop local optimizer with the acquisition named in `config`.
///
/// `Cages` uses every information source with a latent-variable multi-task
/// GP; `Ges` and `GiboTrace` use the primary task only with an SE-ARD GP.
pub fn run_local(problem: &dyn MisProblem, config: &OptimizerConfig) -> Result<RunRecord> {
    config.validate()?;
    let kind = config.acquisition;
    let domain = problem.domain().clone();
    let tasks: Vec<usize> = match kind {
        AcquisitionKind::Cages => (0..problem.num_sources()).collect(),
        _ => vec![0],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut session = Session::new(problem, config.total_budget)?;
    initial_design(&mut session, &tasks, Cost::from_f64(config.init_budget)?, &mut rng)?;

    let mut model = Model {
        hyper: initial_hyperparameters(&domain, tasks.len(), config)?,
        standardization: Standardization::IDENTITY,
        improved: false,
    };
    let mut x = if tasks.len() > 1 && session.data().len() > 1 {
        model.refit(session.data(), config, &domain, rng.next_u64());
        predicted_start(&model, session.data(), config).unwrap_or_else(|| starting_point(session.data(), &domain))
    } else {
        starting_point(session.data(), &domain)
    };
    let batch = config.batch(domain.dim());
    let mut steps = Vec::new();
    let mut completed = true;

    for t in 0..config.outer_iterations {
        if session.query(&x, 0, Phase::Primary)?.is_none() {
            completed = false;
            break;
        }
        model.refit(session.data(), config, &domain, rng.next_u64());
        let scale2 = model.standardization.scale.powi(2);

        let mut trace_before = f64::NAN;
        let mut inner_tasks = Vec::with_capacity(batch);
        let mut exhausted = false;
        for b in 0..batch {
            let gp = model.posterior(session.data(), config)?;
            let anchor = AnchorBelief::new(&gp, &x, 0)?;
            if b == 0 {
                trace_before = anchor.belief().trace() * scale2;
            }
            let region = config.region.region(&domain, &x, &gp.kernel().clone());
            let query = optimize_acquisition(kind, &anchor, problem.costs(), &region, &config.search, rng.next_u64())?;
            debug!("step {t} inner {b}: task {} value {:.4e}", query.task, query.value);
            if session.query(&query.candidate, query.task, Phase::Inner)?.is_none() {
                exhausted = true;
                break;
            }
            inner_tasks.push(query.task);
        }

        let gp = model.posterior(session.data(), config)?;
        let belief = gp.gradient_belief(&x, 0)?;
        let trace_after = belief.trace() * scale2;
        if batch == 0 {
            trace_before = trace_after;
        }
        let belief = belief_in_objective_units(belief, model.standardization.scale);
        steps.push(OuterStep {
            iteration: t,
            x: x.clone(),
            gradient: belief.mean.iter().copied().collect(),
            trace_before,
            trace_after,
            inner_tasks,
            fit_improved: model.improved,
        });
        if exhausted {
            completed = false;
            break;
        }
        x = gradient_step(&x, &belief, config.step_size, config.rule, &domain)?;
    }
    if completed {
        session.query(&x, 0, Phase::Primary)?;
    }

    Ok(session.finish(method_name(kind), steps, x))
}

fn belief_in_objective_units(belief: GradientBelief, scale: f64) -> GradientBelief {
    GradientBelief {
        mean: DVector::from_iterator(belief.mean.len(), belief.mean.iter().map(|g| g * scale)),
        covariance: belief.covariance * (scale * scale),
    }
}

fn method_name(kind: AcquisitionKind) -> &'static str {
    match kind {
        AcquisitionKind::Cages => "cages",
        AcquisitionKind::Ges => "ges",
        AcquisitionKind::GiboTrace => "gibo",
    }
}

/// [`run_local`] with the cost-aware entropy acquisition over all sources.
pub fn run_cages(problem: &dyn MisProblem, config: &OptimizerConfig) -> Result<RunRecord> {
    run_local(
        problem,
        &OptimizerConfig {
            acquisition: AcquisitionKind::Cages,
            ..config.clone()
        },
    )
}

/// [`run_local`] on the primary source with the trace acquisition.
pub fn run_gibo(problem: &dyn MisProblem, config: &OptimizerConfig) -> Result<RunRecord> {
    run_local(
        problem,
        &OptimizerConfig {
            acquisition: AcquisitionKind::GiboTrace,
            ..config.clone()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{Quadratic, SourceBias};
    use nalgebra::DMatrix;

    fn belief(mean: &[f64]) -> GradientBelief {
        GradientBelief {
            mean: DVector::from_row_slice(mean),
            covariance: DMatrix::identity(mean.len(), mean.len()),
        }
    }

    #[test]
    fn zero_gradient_does_not_move() {
        let dom = Domain::cube(2, -1.0, 1.0).unwrap();
        for rule in [GradientRule::Plain, GradientRule::Normalized] {
            let x = gradient_step(&[0.2, -0.3], &belief(&[0.0, 0.0]), 0.5, rule, &dom).unwrap();
            assert_eq!(x, vec![0.2, -0.3]);
        }
    }

    #[test]
    fn plain_step_arithmetic() {
        let dom = Domain::cube(2, -1.0, 1.0).unwrap();
        let x = gradient_step(&[0.0, 0.0], &belief(&[1.0, -2.0]), 0.1, GradientRule::Plain, &dom).unwrap();
        assert!((x[0] + 0.1).abs() < 1e-15 && (x[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn normalized_step_has_step_size_length() {
        let dom = Domain::cube(2, -10.0, 10.0).unwrap();
        let x = gradient_step(&[0.0, 0.0], &belief(&[3.0, 4.0]), 0.5, GradientRule::Normalized, &dom).unwrap();
        assert!((x[0] + 0.3).abs() < 1e-15 && (x[1] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn step_is_clipped_to_the_box() {
        let dom = Domain::cube(2, -1.0, 1.0).unwrap();
        let x = gradient_step(&[0.9, 0.0], &belief(&[-10.0, 0.0]), 0.1, GradientRule::Plain, &dom).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
        assert!(gradient_step(&[0.0], &belief(&[1.0]), 0.0, GradientRule::Plain, &Domain::cube(1, -1.0, 1.0).unwrap()).is_err());
    }

    fn small_config() -> OptimizerConfig {
        OptimizerConfig {
            step_size: 0.1,
            outer_iterations: 3,
            init_budget: 40.0,
            fit_restarts: 2,
            search: AcquisitionSearch {
                raw_samples: 64,
                starts: 2,
                max_polls: 20,
                min_step: 1e-3,
            },
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn zero_iterations_give_init_plus_one_primary_sample() {
        let q = Quadratic::duplicated(2).unwrap();
        let config = OptimizerConfig {
            outer_iterations: 0,
            ..small_config()
        };
        for run in [run_cages, run_gibo] {
            let rec = run(&q, &config).unwrap();
            let tail: Vec<Phase> = rec.events.iter().map(|e| e.phase).filter(|p| *p != Phase::Init).collect();
            assert_eq!(tail, vec![Phase::Primary]);
            assert!(rec.events.iter().rev().skip(1).all(|e| e.phase == Phase::Init));
            assert!(rec.steps.is_empty());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let q = Quadratic::new("q", vec![0.3, -0.2], SourceBias::Duplicate).unwrap();
        let a = run_cages(&q, &small_config()).unwrap();
        let b = run_cages(&q, &small_config()).unwrap();
        assert_eq!(a, b);
    }
}
