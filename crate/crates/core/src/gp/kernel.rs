use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::lvgp::LatentEmbedding;

/// How observations on different information sources are coupled.
///
/// Every family factors as `k((x,a),(x',b)) = scale(a,b) * s(x,x') + offset(a,b)`
/// with `s` the squared-exponential ARD radial factor, so derivatives in the
/// continuous coordinates only ever need `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskCoupling {
    /// Task index ignored: plain SE-ARD kernel.
    Single,
    /// Latent-variable embedding: `scale = exp(-|z(a) - z(b)|^2)`.
    Latent(LatentEmbedding),
    /// `(1-λ)(k_x + k_l) + λ k_x k_l` with categorical `k_l = σ·[a == b]`.
    Mixture {
        lambda: f64,
        categorical_scale: f64,
        num_tasks: usize,
    },
}

/// Covariance function over `(x, task)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    lengthscales: Vec<f64>,
    output_scale: f64,
    coupling: TaskCoupling,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and positive, got {v}")))
    }
}

impl Kernel {
    pub fn new(lengthscales: Vec<f64>, output_scale: f64, coupling: TaskCoupling) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(invalid("kernel needs at least one lengthscale"));
        }
        for l in &lengthscales {
            check_positive("lengthscale", *l)?;
        }
        check_positive("output scale", output_scale)?;
        if let TaskCoupling::Mixture {
            lambda,
            categorical_scale,
            num_tasks,
        } = &coupling
        {
            if !(0.0..=1.0).contains(lambda) {
                return Err(invalid(format!("mixture weight must lie in [0, 1], got {lambda}")));
            }
            check_positive("categorical scale", *categorical_scale)?;
            if *num_tasks == 0 {
                return Err(invalid("mixture kernel needs at least one task"));
            }
        }
        Ok(Self {
            lengthscales,
            output_scale,
            coupling,
        })
    }

    /// Squared-exponential ARD kernel `ζ² exp(-r²/2)`.
    pub fn se_ard(lengthscales: Vec<f64>, output_scale: f64) -> Result<Self> {
        Self::new(lengthscales, output_scale, TaskCoupling::Single)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn coupling(&self) -> &TaskCoupling {
        &self.coupling
    }

    /// Number of tasks the kernel can address, `None` for task-agnostic kernels.
    pub fn num_tasks(&self) -> Option<usize> {
        match &self.coupling {
            TaskCoupling::Single => None,
            TaskCoupling::Latent(e) => Some(e.num_tasks()),
            TaskCoupling::Mixture { num_tasks, .. } => Some(*num_tasks),
        }
    }

    pub(crate) fn with_parts(&self, lengthscales: Vec<f64>, output_scale: f64, coupling: TaskCoupling) -> Self {
        Self {
            lengthscales,
            output_scale,
            coupling,
        }
    }

    pub fn check_task(&self, task: usize) -> Result<()> {
        match self.num_tasks() {
            Some(n) if task >= n => Err(invalid(format!(
                "task index {task} out of range for a kernel over {n} tasks"
            ))),
            _ => Ok(()),
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(invalid(format!(
                "input has dimension {} but kernel expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Squared scaled distance `r²(a, b)`.
    pub(crate) fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let u = (x - y) / l;
                u * u
            })
            .sum()
    }

    /// SE radial factor `ζ² exp(-r²/2)`.
    pub(crate) fn radial(&self, a: &[f64], b: &[f64]) -> f64 {
        self.output_scale * (-0.5 * self.scaled_sq_dist(a, b)).exp()
    }

    /// `(scale, offset)` such that `k = scale * radial + offset`.
    pub(crate) fn task_factors(&self, ta: usize, tb: usize) -> (f64, f64) {
        match &self.coupling {
            TaskCoupling::Single => (1.0, 0.0),
            TaskCoupling::Latent(e) => ((-e.sq_distance(ta, tb)).exp(), 0.0),
            TaskCoupling::Mixture {
                lambda,
                categorical_scale,
                ..
            } => {
                let kl = if ta == tb { *categorical_scale } else { 0.0 };
                ((1.0 - lambda) + lambda * kl, (1.0 - lambda) * kl)
            }
        }
    }

    /// Kernel value without argument validation.
    pub(crate) fn k(&self, a: &[f64], ta: usize, b: &[f64], tb: usize) -> f64 {
        let (scale, offset) = self.task_factors(ta, tb);
        scale * self.radial(a, b) + offset
    }

    /// `k((a, ta), (b, tb))`.
    pub fn eval(&self, a: &[f64], ta: usize, b: &[f64], tb: usize) -> Result<f64> {
        self.check_point(a)?;
        self.check_point(b)?;
        self.check_task(ta)?;
        self.check_task(tb)?;
        Ok(self.k(a, ta, b, tb))
    }

    /// Prior variance `k((x,t),(x,t))`, which does not depend on `x`.
    pub fn prior_variance(&self, task: usize) -> f64 {
        let (scale, offset) = self.task_factors(task, task);
        scale * self.output_scale + offset
    }

    /// Gradient of `k((a,ta),(b,tb))` with respect to `a`, written into `out`.
    pub(crate) fn grad_first(&self, a: &[f64], ta: usize, b: &[f64], tb: usize, out: &mut [f64]) {
        let (scale, _) = self.task_factors(ta, tb);
        let s = scale * self.radial(a, b);
        for ((o, (x, y)), l) in out.iter_mut().zip(a.iter().zip(b)).zip(&self.lengthscales) {
            *o = -s * (x - y) / (l * l);
        }
    }

    /// Mixed second derivative `∂²k / ∂a_i ∂b_j`.
    pub fn cross_hessian(&self, a: &[f64], ta: usize, b: &[f64], tb: usize) -> DMatrix<f64> {
        let d = self.dim();
        let (scale, _) = self.task_factors(ta, tb);
        let s = scale * self.radial(a, b);
        let u: Vec<f64> = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| (x - y) / (l * l))
            .collect();
        DMatrix::from_fn(d, d, |i, j| {
            let diag = if i == j {
                1.0 / (self.lengthscales[i] * self.lengthscales[i])
            } else {
                0.0
            };
            s * (diag - u[i] * u[j])
        })
    }

    /// Prior covariance of `∇_x f(x, task)`: `scale(t,t) ζ² diag(1/l_i²)`.
    pub fn prior_gradient_covariance(&self, task: usize) -> DMatrix<f64> {
        let (scale, _) = self.task_factors(task, task);
        let s = scale * self.output_scale;
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                s / (self.lengthscales[i] * self.lengthscales[i])
            } else {
                0.0
            }
        })
    }

    /// Gram matrix over `(points[i], tasks[i])`.
    pub fn gram(&self, points: &[Vec<f64>], tasks: &[usize]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.k(&points[i], tasks[i], &points[j], tasks[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}
