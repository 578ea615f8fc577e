//! Multi-information-source test problems. All problems are minimized.

mod cartpole;
mod rosenbrock;
mod synthetic;

pub use cartpole::{
    cartpole_reward, cartpole_step, Cartpole, CartpoleConfig, CartpoleState, LinearPolicy, POLICY_PARAMS,
};
pub use rosenbrock::{rosenbrock_mis, RosenbrockMis};
pub use synthetic::{make_test_problems, Forrester, Quadratic, SourceBias};

use crate::acquisition::CostModel;
use crate::domain::Domain;
use crate::error::Result;

/// Location and value of a known global minimum of the primary task.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownOptimum {
    pub x: Vec<f64>,
    pub value: f64,
}

/// A black-box objective `f⁽⁰⁾` with `M` cheaper approximations `f⁽¹..M⁾`.
pub trait MisProblem: Send + Sync {
    fn name(&self) -> &str;

    fn domain(&self) -> &Domain;

    fn costs(&self) -> &CostModel;

    /// Evaluates information source `task` at `x`.
    fn evaluate(&self, x: &[f64], task: usize) -> Result<f64>;

    fn dim(&self) -> usize {
        self.domain().dim()
    }

    /// `M + 1`.
    fn num_sources(&self) -> usize {
        self.costs().num_tasks()
    }

    fn optimum(&self) -> Option<KnownOptimum> {
        None
    }
}
