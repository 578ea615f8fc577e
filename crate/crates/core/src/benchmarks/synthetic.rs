//! Small synthetic problems used by tests and the quickstart experiments.

use super::{KnownOptimum, MisProblem};
use crate::acquisition::CostModel;
use crate::domain::Domain;
use crate::error::{invalid, Result};

/// How the cheap source of a [`Quadratic`] deviates from the primary one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceBias {
    /// Exact copy of the primary task.
    Duplicate,
    /// Adds `amplitude · Σ sin(frequency · x_i)`.
    Sine { amplitude: f64, frequency: f64 },
}

impl SourceBias {
    fn offset(&self, x: &[f64]) -> f64 {
        match *self {
            SourceBias::Duplicate => 0.0,
            SourceBias::Sine { amplitude, frequency } => amplitude * x.iter().map(|v| (frequency * v).sin()).sum::<f64>(),
        }
    }
}

/// `f⁽⁰⁾(x) = ‖x − c‖²` on `[-1, 1]^d` with one cheaper source at cost ratio 10:1.
#[derive(Debug, Clone)]
pub struct Quadratic {
    name: String,
    center: Vec<f64>,
    bias: SourceBias,
    domain: Domain,
    costs: CostModel,
}

impl Quadratic {
    pub fn new(name: impl Into<String>, center: Vec<f64>, bias: SourceBias) -> Result<Self> {
        let domain = Domain::cube(center.len(), -1.0, 1.0)?;
        if !domain.contains(&center) {
            return Err(invalid("quadratic center must lie in [-1, 1]^d"));
        }
        Ok(Self {
            name: name.into(),
            center,
            bias,
            domain,
            costs: CostModel::new(&[10.0, 1.0])?,
        })
    }

    /// Quadratic centred at `(0.3, …, 0.3)` whose cheap source is an exact copy.
    pub fn duplicated(dim: usize) -> Result<Self> {
        Self::new("quad-dup", vec![0.3; dim], SourceBias::Duplicate)
    }

    /// Quadratic centred at `(0.3, …, 0.3)` whose cheap source adds `0.5 Σ sin(5 x_i)`.
    pub fn biased(dim: usize) -> Result<Self> {
        Self::new(
            "quad-bias",
            vec![0.3; dim],
            SourceBias::Sine {
                amplitude: 0.5,
                frequency: 5.0,
            },
        )
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn bias(&self) -> SourceBias {
        self.bias
    }
}

impl MisProblem for Quadratic {
    fn name(&self) -> &str {
        &self.name
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn costs(&self) -> &CostModel {
        &self.costs
    }

    fn evaluate(&self, x: &[f64], task: usize) -> Result<f64> {
        self.domain.check(x)?;
        let base: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum();
        match task {
            0 => Ok(base),
            1 => Ok(base + self.bias.offset(x)),
            _ => Err(invalid(format!("{} has tasks 0 and 1, got {task}", self.name))),
        }
    }

    fn optimum(&self) -> Option<KnownOptimum> {
        Some(KnownOptimum {
            x: self.center.clone(),
            value: 0.0,
        })
    }
}

/// The one-dimensional Forrester function `(6x − 2)² sin(12x − 4)` on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Forrester {
    domain: Domain,
    costs: CostModel,
}

impl Forrester {
    /// Minimizer located by a dense grid search followed by Newton polishing.
    pub const ARGMIN: f64 = 0.757_248_757_841_856;

    pub fn new() -> Self {
        Self {
            domain: Domain::cube(1, 0.0, 1.0).expect("unit interval"),
            costs: CostModel::uniform(1),
        }
    }

    pub fn value(x: f64) -> f64 {
        (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin()
    }
}

impl Default for Forrester {
    fn default() -> Self {
        Self::new()
    }
}

impl MisProblem for Forrester {
    fn name(&self) -> &str {
        "forrester"
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn costs(&self) -> &CostModel {
        &self.costs
    }

    fn evaluate(&self, x: &[f64], task: usize) -> Result<f64> {
        self.domain.check(x)?;
        if task != 0 {
            return Err(invalid(format!("forrester has a single task, got {task}")));
        }
        Ok(Self::value(x[0]))
    }

    fn optimum(&self) -> Option<KnownOptimum> {
        Some(KnownOptimum {
            x: vec![Self::ARGMIN],
            value: Self::value(Self::ARGMIN),
        })
    }
}

/// 1-d and 2-d quadratics with a duplicated source, and their biased twins.
pub fn make_test_problems() -> Vec<Box<dyn MisProblem>> {
    let mut out: Vec<Box<dyn MisProblem>> = Vec::new();
    for dim in [1, 2] {
        out.push(Box::new(Quadratic::duplicated(dim).expect("valid quadratic")));
        out.push(Box::new(Quadratic::biased(dim).expect("valid quadratic")));
    }
    out
}
