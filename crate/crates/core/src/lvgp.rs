//! Multi-information-source kernels over augmented inputs `(x, ℓ)`.
//!
//! The latent-variable kernel maps each task level `ℓ` to a point `z(ℓ)` of a
//! small latent space and multiplies the SE radial factor by
//! `exp(-|z(ℓ) - z(ℓ')|²)`. Level 0 is pinned to the origin; only relative
//! positions matter. The mixture kernel is a cheaper alternative that blends
//! a sum and a product of the continuous kernel with an indicator kernel on
//! levels.
//!
//! [`Hyperparameters`] bundles a kernel with its noise model and converts it
//! to and from the flat vector of free parameters used during fitting.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::{Kernel, NoiseModel, TaskCoupling};

/// Default latent dimension.
pub const DEFAULT_LATENT_DIM: usize = 2;

/// Latent coordinates `z(0..M)`; row 0 is always the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEmbedding {
    latent_dim: usize,
    coords: Vec<Vec<f64>>,
}

impl LatentEmbedding {
    /// All levels at the origin.
    pub fn new(num_tasks: usize, latent_dim: usize) -> Result<Self> {
        if num_tasks == 0 || latent_dim == 0 {
            return Err(invalid("embedding needs at least one task and one latent dimension"));
        }
        Ok(Self {
            latent_dim,
            coords: vec![vec![0.0; latent_dim]; num_tasks],
        })
    }

    /// Builds an embedding from explicit coordinates; `coords[0]` must be zero.
    pub fn from_coords(coords: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = coords.first() else {
            return Err(invalid("embedding needs at least one task"));
        };
        let m = first.len();
        if m == 0 || coords.iter().any(|c| c.len() != m) {
            return Err(invalid("latent coordinates must share one nonzero dimension"));
        }
        if first.iter().any(|v| *v != 0.0) {
            return Err(invalid("level 0 must sit at the latent origin"));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("latent coordinates must be finite"));
        }
        Ok(Self {
            latent_dim: m,
            coords,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.coords.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn coords(&self) -> &[Vec<f64>] {
        &self.coords
    }

    pub fn sq_distance(&self, a: usize, b: usize) -> f64 {
        self.coords[a]
            .iter()
            .zip(&self.coords[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }

    /// Inter-task correlation matrix `K_ij = exp(-|z(i) - z(j)|²)`.
    pub fn task_correlation(&self) -> Vec<Vec<f64>> {
        let n = self.num_tasks();
        (0..n)
            .map(|i| (0..n).map(|j| (-self.sq_distance(i, j)).exp()).collect())
            .collect()
    }

    fn free_coords(&self) -> impl Iterator<Item = f64> + '_ {
        self.coords[1..].iter().flatten().copied()
    }
}

/// Parameters of the sum/product mixture kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureKernelParams {
    pub lambda: f64,
    pub categorical_scale: f64,
    pub num_tasks: usize,
    /// Continuous SE-ARD part `k_x`.
    pub base: Kernel,
}

impl MixtureKernelParams {
    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::new(
            self.base.lengthscales().to_vec(),
            self.base.output_scale(),
            TaskCoupling::Mixture {
                lambda: self.lambda,
                categorical_scale: self.categorical_scale,
                num_tasks: self.num_tasks,
            },
        )
    }
}

fn check_level(task: usize, num_tasks: usize) -> Result<()> {
    if task >= num_tasks {
        Err(invalid(format!("task index {task} out of range 0..{num_tasks}")))
    } else {
        Ok(())
    }
}

/// `ζ² exp(-r²(x,x')/2 - |z(ℓ) - z(ℓ')|²)` with `ζ²` and lengthscales from `base`.
pub fn lvgp_kernel(
    embedding: &LatentEmbedding,
    base: &Kernel,
    a: (&[f64], usize),
    b: (&[f64], usize),
) -> Result<f64> {
    check_level(a.1, embedding.num_tasks())?;
    check_level(b.1, embedding.num_tasks())?;
    base.check_point(a.0)?;
    base.check_point(b.0)?;
    Ok(base.radial(a.0, b.0) * (-embedding.sq_distance(a.1, b.1)).exp())
}

/// `(1-λ)(k_x + k_l) + λ k_x k_l` with `k_l(ℓ,ℓ') = σ·[ℓ = ℓ']`.
pub fn mixture_kernel(params: &MixtureKernelParams, a: (&[f64], usize), b: (&[f64], usize)) -> Result<f64> {
    if !(0.0..=1.0).contains(&params.lambda) || params.categorical_scale <= 0.0 {
        return Err(invalid("mixture weight must lie in [0, 1] and scale be positive"));
    }
    check_level(a.1, params.num_tasks)?;
    check_level(b.1, params.num_tasks)?;
    let kx = params.base.eval(a.0, 0, b.0, 0)?;
    let kl = if a.1 == b.1 { params.categorical_scale } else { 0.0 };
    Ok((1.0 - params.lambda) * (kx + kl) + params.lambda * kx * kl)
}

/// How one free parameter is constrained and searched during fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBound {
    pub lower: f64,
    pub upper: f64,
    /// Searched on a log scale (strictly positive parameters).
    pub log_scale: bool,
}

/// Box constraints on hyperparameters, in natural units.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperparameterBounds {
    /// Per-dimension lengthscale bounds.
    pub lengthscale: Vec<(f64, f64)>,
    pub output_scale: (f64, f64),
    pub noise: (f64, f64),
    pub categorical_scale: (f64, f64),
}

impl HyperparameterBounds {
    /// Lengthscales in `[1e-3, 1e3]·width`, output scale in `[1e-4, 1e4]`,
    /// noise variance in `[1e-8, 1e2]`.
    pub fn for_widths(widths: &[f64]) -> Self {
        Self {
            lengthscale: widths.iter().map(|w| (1e-3 * w, 1e3 * w)).collect(),
            output_scale: (1e-4, 1e4),
            noise: (1e-8, 1e2),
            categorical_scale: (1e-4, 1e4),
        }
    }
}

/// Kernel plus noise: everything the likelihood is maximized over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub kernel: Kernel,
    pub noise: NoiseModel,
}

impl Hyperparameters {
    pub fn new(kernel: Kernel, noise: NoiseModel) -> Self {
        Self { kernel, noise }
    }

    /// Number of free parameters: lengthscales, non-pinned latent
    /// coordinates, output scale, mixture weight and scale, noise variances.
    pub fn num_free(&self) -> usize {
        let d = self.kernel.dim();
        let coupling = match self.kernel.coupling() {
            TaskCoupling::Single => 0,
            TaskCoupling::Latent(e) => (e.num_tasks() - 1) * e.latent_dim(),
            TaskCoupling::Mixture { .. } => 2,
        };
        d + coupling + 1 + self.noise.num_tasks()
    }

    /// Flat vector in natural units. Layout: lengthscales, latent
    /// coordinates of levels `1..=M` (row-major), output scale, then
    /// `λ, σ` for the mixture kernel, then one noise variance per task.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_free());
        v.extend_from_slice(self.kernel.lengthscales());
        if let TaskCoupling::Latent(e) = self.kernel.coupling() {
            v.extend(e.free_coords());
        }
        v.push(self.kernel.output_scale());
        if let TaskCoupling::Mixture {
            lambda,
            categorical_scale,
            ..
        } = self.kernel.coupling()
        {
            v.push(*lambda);
            v.push(*categorical_scale);
        }
        v.extend_from_slice(self.noise.variances());
        v
    }

    /// Inverse of [`pack`](Self::pack), using `self` as the structural template.
    pub fn unpack(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.num_free() {
            return Err(invalid(format!(
                "expected {} hyperparameters, got {}",
                self.num_free(),
                v.len()
            )));
        }
        let d = self.kernel.dim();
        let mut at = 0;
        let mut take = |k: usize| {
            let s = &v[at..at + k];
            at += k;
            s
        };
        let lengthscales = take(d).to_vec();
        let latent = match self.kernel.coupling() {
            TaskCoupling::Latent(e) => {
                let m = e.latent_dim();
                let mut coords = vec![vec![0.0; m]];
                for _ in 1..e.num_tasks() {
                    coords.push(take(m).to_vec());
                }
                Some(coords)
            }
            _ => None,
        };
        let output_scale = take(1)[0];
        let coupling = match self.kernel.coupling() {
            TaskCoupling::Single => TaskCoupling::Single,
            TaskCoupling::Latent(_) => TaskCoupling::Latent(LatentEmbedding::from_coords(
                latent.expect("latent coordinates were read"),
            )?),
            TaskCoupling::Mixture { num_tasks, .. } => {
                let p = take(2);
                TaskCoupling::Mixture {
                    lambda: p[0],
                    categorical_scale: p[1],
                    num_tasks: *num_tasks,
                }
            }
        };
        let noise = take(self.noise.num_tasks()).to_vec();
        let kernel = Kernel::new(lengthscales, output_scale, coupling)?;
        let noise = NoiseModel::new(noise, self.noise.jitter())?;
        Ok(Self { kernel, noise })
    }

    /// Unchecked unpack for the optimizer's inner loop; values must already
    /// satisfy the bounds.
    pub(crate) fn unpack_trusted(&self, v: &[f64]) -> Self {
        let d = self.kernel.dim();
        let mut at = d;
        let coupling = match self.kernel.coupling() {
            TaskCoupling::Single => TaskCoupling::Single,
            TaskCoupling::Latent(e) => {
                let m = e.latent_dim();
                let mut coords = Vec::with_capacity(e.num_tasks());
                coords.push(vec![0.0; m]);
                for _ in 1..e.num_tasks() {
                    coords.push(v[at..at + m].to_vec());
                    at += m;
                }
                TaskCoupling::Latent(LatentEmbedding {
                    latent_dim: m,
                    coords,
                })
            }
            TaskCoupling::Mixture { num_tasks, .. } => TaskCoupling::Mixture {
                lambda: v[at + 1],
                categorical_scale: v[at + 2],
                num_tasks: *num_tasks,
            },
        };
        let output_scale = v[at];
        at += 1;
        if matches!(coupling, TaskCoupling::Mixture { .. }) {
            at += 2;
        }
        Self {
            kernel: self.kernel.with_parts(v[..d].to_vec(), output_scale, coupling),
            noise: self.noise.with_variances(v[at..].to_vec()),
        }
    }

    /// Per-entry bounds in the [`pack`](Self::pack) layout.
    pub fn bounds(&self, b: &HyperparameterBounds) -> Result<Vec<ParamBound>> {
        if b.lengthscale.len() != self.kernel.dim() {
            return Err(invalid("lengthscale bounds do not match the kernel dimension"));
        }
        let log = |(lower, upper): (f64, f64)| ParamBound {
            lower,
            upper,
            log_scale: true,
        };
        let mut out: Vec<ParamBound> = b.lengthscale.iter().copied().map(log).collect();
        if let TaskCoupling::Latent(e) = self.kernel.coupling() {
            out.extend((0..(e.num_tasks() - 1) * e.latent_dim()).map(|_| ParamBound {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
                log_scale: false,
            }));
        }
        out.push(log(b.output_scale));
        if let TaskCoupling::Mixture { .. } = self.kernel.coupling() {
            out.push(ParamBound {
                lower: 0.0,
                upper: 1.0,
                log_scale: false,
            });
            out.push(log(b.categorical_scale));
        }
        out.extend((0..self.noise.num_tasks()).map(|_| log(b.noise)));
        Ok(out)
    }
}
