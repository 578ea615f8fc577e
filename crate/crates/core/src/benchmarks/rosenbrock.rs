use super::{KnownOptimum, MisProblem};
use crate::acquisition::CostModel;
use crate::domain::Domain;
use crate::error::{invalid, Result};

/// Rosenbrock function on `[0, 2]^d` (task 0) and a copy with an added
/// oscillation `0.1 Σ sin(10 x_i + 5 x_{i+1})` (task 1).
pub fn rosenbrock_mis(x: &[f64], task: usize) -> Result<f64> {
    if x.len() < 2 {
        return Err(invalid("rosenbrock needs at least two dimensions"));
    }
    if x.iter().any(|v| !(0.0..=2.0).contains(v)) {
        return Err(invalid(format!("rosenbrock input {x:?} outside [0, 2]^d")));
    }
    let base: f64 = x
        .windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
        .sum();
    match task {
        0 => Ok(base),
        1 => Ok(base + 0.1 * x.windows(2).map(|w| (10.0 * w[0] + 5.0 * w[1]).sin()).sum::<f64>()),
        _ => Err(invalid(format!("rosenbrock has tasks 0 and 1, got {task}"))),
    }
}

/// Two-source Rosenbrock benchmark with query costs 10 and 1.
#[derive(Debug, Clone)]
pub struct RosenbrockMis {
    domain: Domain,
    costs: CostModel,
}

impl RosenbrockMis {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("rosenbrock needs at least two dimensions"));
        }
        Ok(Self {
            domain: Domain::cube(dim, 0.0, 2.0)?,
            costs: CostModel::new(&[10.0, 1.0])?,
        })
    }
}

impl MisProblem for RosenbrockMis {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn costs(&self) -> &CostModel {
        &self.costs
    }

    fn evaluate(&self, x: &[f64], task: usize) -> Result<f64> {
        self.domain.check(x)?;
        rosenbrock_mis(x, task)
    }

    fn optimum(&self) -> Option<KnownOptimum> {
        Some(KnownOptimum {
            x: vec![1.0; self.domain.dim()],
            value: 0.0,
        })
    }
}
