use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{invalid, Result};

/// One row of a dataset: the value `y` observed on information source `task`
/// at design point `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub task: usize,
    pub y: f64,
}

/// Ordered observations. Order is stable: later code refers to rows by position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: Vec<Observation>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Observation>) -> Result<Self> {
        let mut d = Self::new();
        for r in rows {
            d.push(r)?;
        }
        Ok(d)
    }

    /// Appends a row; all rows must share one dimension and have a finite `y`.
    pub fn push(&mut self, row: Observation) -> Result<()> {
        if let Some(first) = self.rows.first() {
            if first.x.len() != row.x.len() {
                return Err(invalid(format!(
                    "observation has dimension {} but dataset has {}",
                    row.x.len(),
                    first.x.len()
                )));
            }
        }
        if !row.y.is_finite() || row.x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observations must be finite"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn dim(&self) -> Option<usize> {
        self.rows.first().map(|r| r.x.len())
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.x.clone()).collect()
    }

    pub fn tasks(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.task).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    /// Checks every row against the domain and the task count `num_tasks`.
    pub fn validate(&self, domain: &Domain, num_tasks: usize) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            domain
                .check(&r.x)
                .map_err(|e| invalid(format!("row {i}: {e}")))?;
            if r.task >= num_tasks {
                return Err(invalid(format!(
                    "row {i}: task {} out of range 0..{num_tasks}",
                    r.task
                )));
            }
        }
        Ok(())
    }

    /// The most recent `max_rows` rows.
    pub fn tail(&self, max_rows: usize) -> Dataset {
        let start = self.rows.len().saturating_sub(max_rows);
        Dataset {
            rows: self.rows[start..].to_vec(),
        }
    }

    /// Copy with targets mapped through `s`.
    pub fn standardized(&self, s: &Standardization) -> Dataset {
        Dataset {
            rows: self
                .rows
                .iter()
                .map(|r| Observation {
                    x: r.x.clone(),
                    task: r.task,
                    y: s.forward(r.y),
                })
                .collect(),
        }
    }
}

/// Affine target transform `(y - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self {
        mean: 0.0,
        scale: 1.0,
    };

    /// Statistics of the primary-task (`task == 0`) targets, falling back to
    /// all targets when fewer than two primary rows exist. A degenerate
    /// spread gives unit scale.
    pub fn fit(data: &Dataset) -> Self {
        let primary: Vec<f64> = data
            .rows()
            .iter()
            .filter(|r| r.task == 0)
            .map(|r| r.y)
            .collect();
        let ys = if primary.len() >= 2 { primary } else { data.targets() };
        if ys.is_empty() {
            return Self::IDENTITY;
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = if ys.len() > 1 {
            ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let sd = var.sqrt();
        let scale = if sd.is_finite() && sd > 1e-12 * mean.abs().max(1.0) {
            sd
        } else {
            1.0
        };
        Self { mean, scale }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.mean + self.scale * z
    }
}

/// Constant per-task observation noise plus the relative diagonal jitter
/// that starts the factorization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    variances: Vec<f64>,
    jitter: f64,
}

/// Starting jitter, relative to the kernel's prior variance.
pub const DEFAULT_JITTER: f64 = 1e-8;

impl NoiseModel {
    pub fn new(variances: Vec<f64>, jitter: f64) -> Result<Self> {
        if variances.is_empty() {
            return Err(invalid("noise model needs at least one task"));
        }
        if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("noise variances must be finite and nonnegative"));
        }
        if !(jitter.is_finite() && jitter > 0.0) {
            return Err(invalid("jitter must be positive"));
        }
        Ok(Self { variances, jitter })
    }

    /// `num_tasks` tasks with identical variance and the default jitter.
    pub fn uniform(num_tasks: usize, variance: f64) -> Result<Self> {
        Self::new(vec![variance; num_tasks], DEFAULT_JITTER)
    }

    pub fn noiseless(num_tasks: usize) -> Self {
        Self {
            variances: vec![0.0; num_tasks],
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn num_tasks(&self) -> usize {
        self.variances.len()
    }

    /// Variance for `task`; tasks past the end reuse the last entry.
    pub fn variance(&self, task: usize) -> f64 {
        self.variances
            .get(task)
            .copied()
            .unwrap_or_else(|| *self.variances.last().expect("nonempty"))
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn with_variances(&self, variances: Vec<f64>) -> Self {
        Self {
            variances,
            jitter: self.jitter,
        }
    }
}
