//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's linear algebra: kernels are written
//! out by hand and solves go through an explicit dense inverse.

#![allow(dead_code)]

use cages::gp::{Dataset, Kernel, NoiseModel, Observation, TaskCoupling};
use cages::lvgp::LatentEmbedding;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random regression problem together with the model settings that
/// generated it.
pub struct Case {
    pub data: Dataset,
    pub lengthscales: Vec<f64>,
    pub output_scale: f64,
    pub noise: f64,
    /// Latent coordinates per task (row 0 at the origin) or `None` for a
    /// single-task problem.
    pub latent: Option<Vec<Vec<f64>>>,
}

impl Case {
    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.latent.as_ref().map_or(1, Vec::len)
    }

    pub fn kernel(&self) -> Kernel {
        let coupling = match &self.latent {
            None => TaskCoupling::Single,
            Some(z) => TaskCoupling::Latent(LatentEmbedding::from_coords(z.clone()).unwrap()),
        };
        Kernel::new(self.lengthscales.clone(), self.output_scale, coupling).unwrap()
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::uniform(self.num_tasks(), self.noise).unwrap()
    }

    /// Hand-written covariance between `(a, ta)` and `(b, tb)`.
    pub fn k(&self, a: &[f64], ta: usize, b: &[f64], tb: usize) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        let task = match &self.latent {
            None => 0.0,
            Some(z) => z[ta].iter().zip(&z[tb]).map(|(p, q)| (p - q).powi(2)).sum(),
        };
        self.output_scale * (-0.5 * r2 - task).exp()
    }

    /// `∂k/∂a` for the hand-written kernel.
    pub fn dk(&self, a: &[f64], ta: usize, b: &[f64], tb: usize) -> Vec<f64> {
        let k = self.k(a, ta, b, tb);
        a.iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| -k * (x - y) / (l * l))
            .collect()
    }

    pub fn random_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(0.0..1.0)).collect()
    }
}

/// A smooth test function with a per-task offset.
fn response(x: &[f64], task: usize, phase: f64) -> f64 {
    let s: f64 = x.iter().enumerate().map(|(i, v)| ((i as f64 + 1.0) * 2.3 * v + phase).sin()).sum();
    s + 0.1 * x.iter().map(|v| v * v).sum::<f64>() + 0.2 * task as f64
}

/// `n` random observations in `[0, 1]^d`.
pub fn random_case(rng: &mut impl Rng, d: usize, n: usize, num_tasks: usize) -> Case {
    let phase = rng.random_range(0.0..6.0);
    let rows = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let task = rng.random_range(0..num_tasks);
            let y = response(&x, task, phase) + 0.01 * rng.random_range(-1.0..1.0);
            Observation { x, task, y }
        })
        .collect();
    let latent = (num_tasks > 1).then(|| {
        let mut z = vec![vec![0.0, 0.0]];
        for _ in 1..num_tasks {
            z.push(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        }
        z
    });
    Case {
        data: Dataset::from_rows(rows).unwrap(),
        lengthscales: (0..d).map(|_| rng.random_range(0.2..1.0)).collect(),
        output_scale: rng.random_range(0.5..2.0),
        noise: 10f64.powf(rng.random_range(-4.0..-2.0)),
        latent,
    }
}

/// Posterior quantities computed through an explicit inverse of
/// `K + σ²I + jitter·I`.
pub struct DenseOracle<'a> {
    case: &'a Case,
    inverse: DMatrix<f64>,
    y: DVector<f64>,
    log_det: f64,
}

impl<'a> DenseOracle<'a> {
    pub fn new(case: &'a Case, jitter: f64) -> Self {
        let rows = case.data.rows();
        let n = rows.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| case.k(&rows[i].x, rows[i].task, &rows[j].x, rows[j].task));
        for i in 0..n {
            k[(i, i)] += case.noise + jitter;
        }
        let log_det = k.clone().lu().determinant().ln();
        let inverse = k.try_inverse().expect("covariance is invertible");
        let y = DVector::from_iterator(n, rows.iter().map(|r| r.y));
        Self { case, inverse, y, log_det }
    }

    fn cross(&self, x: &[f64], task: usize) -> DVector<f64> {
        let rows = self.case.data.rows();
        DVector::from_iterator(rows.len(), rows.iter().map(|r| self.case.k(&r.x, r.task, x, task)))
    }

    pub fn predict(&self, x: &[f64], task: usize) -> (f64, f64) {
        let kx = self.cross(x, task);
        let mean = (kx.transpose() * &self.inverse * &self.y)[(0, 0)];
        let var = self.case.k(x, task, x, task) - (kx.transpose() * &self.inverse * &kx)[(0, 0)];
        (mean, var)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len() as f64;
        let fit = (self.y.transpose() * &self.inverse * &self.y)[(0, 0)];
        -0.5 * fit - 0.5 * self.log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// `½ log((2πe)^d |Σ|)` with the determinant from an LU decomposition.
pub fn gaussian_entropy(sigma: &DMatrix<f64>) -> f64 {
    let d = sigma.nrows() as f64;
    0.5 * (d * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + sigma.clone().lu().determinant().ln())
}

/// Central finite difference of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// The data with one extra row, used to recompute a posterior from scratch.
pub fn with_fantasy(data: &Dataset, x: &[f64], task: usize) -> Dataset {
    let mut rows = data.rows().to_vec();
    rows.push(Observation {
        x: x.to_vec(),
        task,
        y: 0.0,
    });
    Dataset::from_rows(rows).unwrap()
}
