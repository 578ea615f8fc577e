use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::session::{Phase, Session};
use super::{gradient_step, initial_design, starting_point, OptimizerConfig, RunRecord};
use crate::acquisition::Cost;
use crate::benchmarks::MisProblem;
use crate::error::{invalid, Result};
use crate::gp::GradientBelief;
use nalgebra::{DMatrix, DVector};

/// Random-direction finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArsConfig {
    /// Perturbation scale `ν` as a fraction of the mean domain width.
    pub perturbation: f64,
    /// Direction pairs per step; `None` means `⌈d/2⌉`.
    pub directions: Option<usize>,
}

impl Default for ArsConfig {
    fn default() -> Self {
        Self {
            perturbation: 0.05,
            directions: None,
        }
    }
}

impl ArsConfig {
    pub(super) fn validate(&self) -> Result<()> {
        if !(self.perturbation.is_finite() && self.perturbation > 0.0) {
            return Err(invalid("perturbation scale must be positive"));
        }
        if self.directions == Some(0) {
            return Err(invalid("need at least one direction per step"));
        }
        Ok(())
    }
}

fn estimate(plus: &[f64], minus: &[f64], directions: &[Vec<f64>], nu: f64) -> Vec<f64> {
    let d = directions[0].len();
    let denom = 2.0 * nu * directions.len() as f64;
    let mut g = vec![0.0; d];
    for ((p, m), delta) in plus.iter().zip(minus).zip(directions) {
        let diff = p - m;
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += diff * di;
        }
    }
    g.iter_mut().for_each(|v| *v /= denom);
    g
}

/// `(1/(2νN)) Σ (f(x+νδ) − f(x−νδ)) δ` over the given directions.
pub fn ars_gradient<F>(mut f: F, x: &[f64], nu: f64, directions: &[Vec<f64>]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(nu.is_finite() && nu > 0.0) {
        return Err(invalid("perturbation scale must be positive"));
    }
    if directions.is_empty() || directions.iter().any(|d| d.len() != x.len()) {
        return Err(invalid("need at least one direction of the iterate's dimension"));
    }
    let mut plus = Vec::with_capacity(directions.len());
    let mut minus = Vec::with_capacity(directions.len());
    for delta in directions {
        let p: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + nu * b).collect();
        let m: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a - nu * b).collect();
        plus.push(f(&p)?);
        minus.push(f(&m)?);
    }
    Ok(estimate(&plus, &minus, directions, nu))
}

/// Augmented random search on the primary task.
///
/// Probe points falling outside the domain are projected back onto it
/// before evaluation; the estimator still uses the nominal `±ν δ`.
pub fn run_ars(problem: &dyn MisProblem, config: &OptimizerConfig) -> Result<RunRecord> {
    config.validate()?;
    let domain = problem.domain().clone();
    let d = domain.dim();
    let widths = domain.widths();
    let nu = config.ars.perturbation * widths.iter().sum::<f64>() / d as f64;
    let n_dirs = config.ars.directions.unwrap_or(d.div_ceil(2));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut session = Session::new(problem, config.total_budget)?;
    initial_design(&mut session, &[0], Cost::from_f64(config.init_budget)?, &mut rng)?;
    let mut x = starting_point(session.data(), &domain);

    'outer: for _ in 0..config.outer_iterations {
        let directions: Vec<Vec<f64>> = (0..n_dirs)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut plus = Vec::with_capacity(n_dirs);
        let mut minus = Vec::with_capacity(n_dirs);
        for delta in &directions {
            for (sign, out) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                let mut p: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + sign * nu * b).collect();
                domain.clip(&mut p);
                match session.query(&p, 0, Phase::Probe)? {
                    Some(y) => out.push(y),
                    None => break 'outer,
                }
            }
        }
        let g = estimate(&plus, &minus, &directions, nu);
        let belief = GradientBelief {
            mean: DVector::from_vec(g),
            covariance: DMatrix::zeros(d, d),
        };
        x = gradient_step(&x, &belief, config.step_size, config.rule, &domain)?;
    }
    Ok(session.finish("ars", Vec::new(), x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_estimate() {
        let dirs = vec![vec![0.3, -1.2], vec![2.0, 0.5]];
        let g = ars_gradient(|_| Ok(4.2), &[0.1, 0.2], 0.05, &dirs).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn axis_direction_is_central_difference() {
        let f = |x: &[f64]| Ok(x[0].powi(3) + 2.0 * x[1]);
        let x = [0.4, -0.1];
        let nu = 0.01;
        let g = ars_gradient(f, &x, nu, &[vec![1.0, 0.0]]).unwrap();
        let cd = ((x[0] + nu).powi(3) - (x[0] - nu).powi(3)) / (2.0 * nu);
        assert!((g[0] - cd).abs() < 1e-12);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(ars_gradient(|_| Ok(0.0), &[0.0], 0.0, &[vec![1.0]]).is_err());
        assert!(ars_gradient(|_| Ok(0.0), &[0.0], 0.1, &[]).is_err());
        assert!(ars_gradient(|_| Ok(0.0), &[0.0], 0.1, &[vec![1.0, 0.0]]).is_err());
    }
}
