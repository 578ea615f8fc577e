use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::data::{Dataset, NoiseModel};
use super::kernel::Kernel;
use crate::error::{invalid, Error, Result};

/// Number of ×10 jitter escalations after the initial attempt
/// (relative jitter 1e-8 up to 1e-4 with the default starting level).
const JITTER_ESCALATIONS: usize = 4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Factorizes `matrix + jitter·I`, escalating the jitter ×10 on failure.
/// `scale` sets the absolute size of the jitter (usually the prior variance).
pub(crate) fn factorize(
    matrix: &DMatrix<f64>,
    scale: f64,
    relative_jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = matrix.nrows();
    let mut jitter = relative_jitter * scale;
    for _ in 0..=JITTER_ESCALATIONS {
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    let diag = matrix.diagonal();
    Err(Error::Factorization {
        size: n,
        min_diag: diag.min(),
        max_diag: diag.max(),
        jitter: jitter / 10.0,
    })
}

/// Posterior belief about `∇_x f(x, task)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GradientBelief {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    /// Multiplies the underlying function by `factor` (mean ×factor,
    /// covariance ×factor²), e.g. to undo target standardization.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: &self.mean * factor,
            covariance: &self.covariance * (factor * factor),
        }
    }
}

/// A GP conditioned on a dataset: cached Cholesky factor of
/// `k(X,X) + diag(noise) + jitter·I` and the weight vector `K̃⁻¹y`.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: Kernel,
    noise: NoiseModel,
    points: Vec<Vec<f64>>,
    tasks: Vec<usize>,
    targets: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    /// Conditions the zero-mean prior on `data`. An empty dataset yields the prior.
    pub fn new(data: &Dataset, kernel: &Kernel, noise: &NoiseModel) -> Result<Self> {
        for r in data.rows() {
            kernel.check_point(&r.x)?;
            kernel.check_task(r.task)?;
        }
        let points = data.points();
        let tasks = data.tasks();
        let targets = DVector::from_vec(data.targets());
        let scale = kernel.prior_variance(0);
        if points.is_empty() {
            return Ok(Self {
                kernel: kernel.clone(),
                noise: noise.clone(),
                points,
                tasks,
                targets,
                chol: None,
                alpha: DVector::zeros(0),
                jitter: noise.jitter() * scale,
            });
        }
        let mut gram = kernel.gram(&points, &tasks);
        for (i, t) in tasks.iter().enumerate() {
            gram[(i, i)] += noise.variance(*t);
        }
        let (chol, jitter) = factorize(&gram, scale, noise.jitter())?;
        let alpha = chol.solve(&targets);
        Ok(Self {
            kernel: kernel.clone(),
            noise: noise.clone(),
            points,
            tasks,
            targets,
            chol: Some(chol),
            alpha,
            jitter,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn tasks(&self) -> &[usize] {
        &self.tasks
    }

    /// Absolute jitter that was added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Noise plus jitter carried by a new observation on `task`, consistent
    /// with the diagonal of the factorized matrix.
    pub fn observation_variance(&self, task: usize) -> f64 {
        self.noise.variance(task) + self.jitter
    }

    /// `L⁻¹ v` for the lower Cholesky factor.
    pub(crate) fn solve_lower(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c
                .l_dirty()
                .solve_lower_triangular(v)
                .expect("cholesky factor has a positive diagonal"),
            None => DVector::zeros(0),
        }
    }

    pub(crate) fn solve_lower_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c
                .l_dirty()
                .solve_lower_triangular(m)
                .expect("cholesky factor has a positive diagonal"),
            None => DMatrix::zeros(0, m.ncols()),
        }
    }

    /// `k(X, (x, task))`.
    pub fn cross_covariance(&self, x: &[f64], task: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .zip(&self.tasks)
                .map(|(p, t)| self.kernel.k(p, *t, x, task)),
        )
    }

    /// `n × d` matrix whose row `i` is `∇_a k((at, task), (x_i, t_i))`.
    pub(crate) fn gradient_cross_covariance(&self, at: &[f64], task: usize) -> DMatrix<f64> {
        let d = self.kernel.dim();
        let mut g = DMatrix::zeros(self.points.len(), d);
        let mut row = vec![0.0; d];
        for (i, (p, t)) in self.points.iter().zip(&self.tasks).enumerate() {
            self.kernel.grad_first(at, task, p, *t, &mut row);
            for j in 0..d {
                g[(i, j)] = row[j];
            }
        }
        g
    }

    /// Posterior mean and unclamped variance of the latent `f(x, task)`.
    pub fn predict_raw(&self, x: &[f64], task: usize) -> Result<(f64, f64)> {
        self.kernel.check_point(x)?;
        self.kernel.check_task(task)?;
        let prior = self.kernel.prior_variance(task);
        if self.is_empty() {
            return Ok((0.0, prior));
        }
        let kx = self.cross_covariance(x, task);
        let mean = kx.dot(&self.alpha);
        let w = self.solve_lower(&kx);
        Ok((mean, prior - w.dot(&w)))
    }

    /// Posterior mean and variance (clamped at zero).
    pub fn predict(&self, x: &[f64], task: usize) -> Result<(f64, f64)> {
        let (m, v) = self.predict_raw(x, task)?;
        Ok((m, v.max(0.0)))
    }

    /// Gradient of the posterior mean at `x`.
    pub fn mean_gradient(&self, x: &[f64], task: usize) -> Result<DVector<f64>> {
        self.kernel.check_point(x)?;
        self.kernel.check_task(task)?;
        if self.is_empty() {
            return Ok(DVector::zeros(self.kernel.dim()));
        }
        Ok(self.gradient_cross_covariance(x, task).transpose() * &self.alpha)
    }

    /// Joint posterior of `∇_x f(at, task)`.
    pub fn gradient_belief(&self, at: &[f64], task: usize) -> Result<GradientBelief> {
        self.kernel.check_point(at)?;
        self.kernel.check_task(task)?;
        let prior = self.kernel.prior_gradient_covariance(task);
        if self.is_empty() {
            return Ok(GradientBelief {
                mean: DVector::zeros(self.kernel.dim()),
                covariance: prior,
            });
        }
        let g = self.gradient_cross_covariance(at, task);
        let mean = g.transpose() * &self.alpha;
        let v = self.solve_lower_matrix(&g);
        let cov = prior - v.transpose() * v;
        let covariance = (&cov + cov.transpose()) * 0.5;
        Ok(GradientBelief { mean, covariance })
    }

    /// `log p(y | X)` under the conditioned prior.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else {
            return 0.0;
        };
        let n = self.points.len() as f64;
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * self.targets.dot(&self.alpha) - log_det_half - 0.5 * n * LN_2PI
    }

    pub(crate) fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub(crate) fn cholesky(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.chol.as_ref()
    }
}

/// Posterior mean and variance of `f(x, task)` given `data`.
pub fn posterior(
    data: &Dataset,
    kernel: &Kernel,
    noise: &NoiseModel,
    x: &[f64],
    task: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(invalid("posterior needs a nonempty dataset"));
    }
    GpPosterior::new(data, kernel, noise)?.predict(x, task)
}

/// Posterior belief about `∇_x f(at, task)`; the prior when `data` is empty.
pub fn gradient_belief(
    data: &Dataset,
    kernel: &Kernel,
    noise: &NoiseModel,
    at: &[f64],
    task: usize,
) -> Result<GradientBelief> {
    GpPosterior::new(data, kernel, noise)?.gradient_belief(at, task)
}

/// `-½ yᵀK̃⁻¹y - ½ log|K̃| - (n/2) log 2π`.
pub fn log_marginal_likelihood(data: &Dataset, kernel: &Kernel, noise: &NoiseModel) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("log marginal likelihood needs a nonempty dataset"));
    }
    Ok(GpPosterior::new(data, kernel, noise)?.log_marginal_likelihood())
}
