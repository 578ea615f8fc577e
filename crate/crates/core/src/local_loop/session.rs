use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::acquisition::Cost;
use crate::benchmarks::MisProblem;
use crate::error::Result;
use crate::gp::{Dataset, Observation};

/// Why a query was issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Init,
    /// Primary sample at the current iterate.
    Primary,
    /// Acquisition query inside the gradient-learning loop.
    Inner,
    /// Finite-difference probe.
    Probe,
    /// Global acquisition query.
    Global,
}

/// One query with its running totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEvent {
    /// Cumulative cost including this query.
    pub cost: Cost,
    pub task: usize,
    pub x: Vec<f64>,
    pub y: f64,
    /// Running minimum of primary observations; `None` until one exists.
    pub best: Option<f64>,
    pub phase: Phase,
}

/// Budgeted access to a problem that records every query.
pub(super) struct Session<'a> {
    problem: &'a dyn MisProblem,
    budget: Option<Cost>,
    spent: Cost,
    data: Dataset,
    events: Vec<QueryEvent>,
    best: Option<f64>,
    exhausted: bool,
}

impl<'a> Session<'a> {
    pub fn new(problem: &'a dyn MisProblem, budget: Option<f64>) -> Result<Self> {
        Ok(Self {
            problem,
            budget: budget.map(Cost::from_f64).transpose()?,
            spent: Cost::ZERO,
            data: Dataset::new(),
            events: Vec::new(),
            best: None,
            exhausted: false,
        })
    }

    pub fn problem(&self) -> &'a dyn MisProblem {
        self.problem
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Evaluates `task` at `x` unless that would exceed the budget, in which
    /// case nothing is issued, the session is marked exhausted and `None`
    /// is returned.
    pub fn query(&mut self, x: &[f64], task: usize, phase: Phase) -> Result<Option<f64>> {
        if self.exhausted {
            return Ok(None);
        }
        let after = self.spent + self.problem.costs().cost(task);
        if self.budget.is_some_and(|b| after > b) {
            self.exhausted = true;
            return Ok(None);
        }
        let y = self.problem.evaluate(x, task)?;
        self.data.push(Observation {
            x: x.to_vec(),
            task,
            y,
        })?;
        self.spent = after;
        if task == 0 {
            self.best = Some(self.best.map_or(y, |b| b.min(y)));
        }
        self.events.push(QueryEvent {
            cost: after,
            task,
            x: x.to_vec(),
            y,
            best: self.best,
            phase,
        });
        Ok(Some(y))
    }

    pub fn finish(self, method: &str, steps: Vec<super::OuterStep>, final_x: Vec<f64>) -> RunRecord {
        RunRecord {
            method: method.to_string(),
            events: self.events,
            steps,
            final_x,
            total_cost: self.spent,
        }
    }
}
