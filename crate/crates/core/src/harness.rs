//! Replicated experiments: run one optimizer on one benchmark several times,
//! persist every run and aggregate best-so-far curves on a cost grid.
//!
//! Output directory layout:
//!
//! * `config.json`: the experiment configuration (without the output path).
//! * `run_000.jsonl`, `run_001.jsonl`, ...: one JSON object per query with
//!   fields `event`, `cost`, `task`, `y`, `best`, `phase` and `x`.
//! * `summary.json`: per-replicate seed, final point, total cost, best value
//!   or failure message.
//! * `aggregate.csv`: `cost,mean,stderr,rep0,rep1,...` on the default grid.
//!
//! Replicate `r` uses seed `seed + r`. Replicates run on a worker pool whose
//! size is read from the `CAGES_WORKERS` environment variable (default: all
//! available cores); results do not depend on the pool size.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::acquisition::Cost;
use crate::benchmarks::{Cartpole, MisProblem, Quadratic, RosenbrockMis};
use crate::error::{invalid, Error, Result};
use crate::local_loop::{run_ars, run_cages, run_gibo, run_logei, GradientRule, OptimizerConfig, Phase, QueryEvent, RunRecord};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "CAGES_WORKERS";

/// Number of points in the aggregate written by [`run_experiment`].
pub const DEFAULT_GRID_POINTS: usize = 101;

/// Dimension of the synthetic quadratic problems.
pub const QUADRATIC_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemId {
    Rosenbrock12,
    Cartpole,
    QuadDup,
    QuadBias,
}

impl ProblemId {
    pub const ALL: [ProblemId; 4] = [ProblemId::Rosenbrock12, ProblemId::Cartpole, ProblemId::QuadDup, ProblemId::QuadBias];

    pub fn name(&self) -> &'static str {
        match self {
            ProblemId::Rosenbrock12 => "rosenbrock12",
            ProblemId::Cartpole => "cartpole",
            ProblemId::QuadDup => "quad-dup",
            ProblemId::QuadBias => "quad-bias",
        }
    }

    /// Problem instance; `seed` fixes the cartpole initial states.
    pub fn build(&self, seed: u64) -> Result<Box<dyn MisProblem>> {
        Ok(match self {
            ProblemId::Rosenbrock12 => Box::new(RosenbrockMis::new(12)?),
            ProblemId::Cartpole => Box::new(Cartpole::new(seed)),
            ProblemId::QuadDup => Box::new(Quadratic::duplicated(QUADRATIC_DIM)?),
            ProblemId::QuadBias => Box::new(Quadratic::biased(QUADRATIC_DIM)?),
        })
    }

    /// Tuned defaults: `(step size, rule, init budget, total budget)`.
    pub fn defaults(&self) -> (f64, GradientRule, f64, f64) {
        match self {
            ProblemId::Rosenbrock12 => (0.1, GradientRule::Normalized, 120.0, 1000.0),
            ProblemId::Cartpole => (0.5, GradientRule::Normalized, 50.0, 300.0),
            ProblemId::QuadDup | ProblemId::QuadBias => (0.2, GradientRule::Plain, 40.0, 600.0),
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown problem '{s}' (expected rosenbrock12, cartpole, quad-dup or quad-bias)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    Cages,
    Gibo,
    Ars,
    Logei,
}

impl MethodId {
    pub const ALL: [MethodId; 4] = [MethodId::Cages, MethodId::Gibo, MethodId::Ars, MethodId::Logei];

    pub fn name(&self) -> &'static str {
        match self {
            MethodId::Cages => "cages",
            MethodId::Gibo => "gibo",
            MethodId::Ars => "ars",
            MethodId::Logei => "logei",
        }
    }

    pub fn run(&self, problem: &dyn MisProblem, config: &OptimizerConfig) -> Result<RunRecord> {
        match self {
            MethodId::Cages => run_cages(problem, config),
            MethodId::Gibo => run_gibo(problem, config),
            MethodId::Ars => run_ars(problem, config),
            MethodId::Logei => run_logei(problem, config),
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method '{s}' (expected cages, gibo, ars or logei)")))
    }
}

/// One replicated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemId,
    pub method: MethodId,
    pub replicates: usize,
    /// Master seed; replicate `r` runs with `seed + r`. Also fixes the
    /// problem instance.
    pub seed: u64,
    pub total_budget: f64,
    /// Per-run settings. Its `seed` and `total_budget` are overwritten per
    /// replicate.
    pub optimizer: OptimizerConfig,
    #[serde(skip)]
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Configuration with the problem's tuned defaults.
    pub fn new(problem: ProblemId, method: MethodId, out: impl Into<PathBuf>) -> Self {
        let (step_size, rule, init_budget, total_budget) = problem.defaults();
        Self {
            problem,
            method,
            replicates: 10,
            seed: 0,
            total_budget,
            optimizer: OptimizerConfig {
                step_size,
                rule,
                init_budget,
                outer_iterations: usize::MAX,
                ..OptimizerConfig::default()
            },
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("need at least one replicate"));
        }
        if !(self.total_budget.is_finite() && self.total_budget > 0.0) {
            return Err(invalid("total budget must be positive"));
        }
        if self.optimizer.init_budget > self.total_budget {
            return Err(invalid("initialization budget exceeds the total budget"));
        }
        self.optimizer.validate()
    }

    fn replicate_config(&self, r: usize) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seed.wrapping_add(r as u64),
            total_budget: Some(self.total_budget),
            ..self.optimizer.clone()
        }
    }
}

/// Best-so-far statistics on a cost grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `replicates[r][i]` is replicate `r` at `grid[i]`.
    pub replicates: Vec<Vec<f64>>,
}

impl AggregateCurve {
    /// Comma-separated table with header `cost,mean,stderr,rep0,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cost,mean,stderr");
        for r in 0..self.replicates.len() {
            out.push_str(&format!(",rep{r}"));
        }
        out.push('\n');
        for (i, c) in self.grid.iter().enumerate() {
            out.push_str(&format!("{c},{},{}", self.mean[i], self.stderr[i]));
            for rep in &self.replicates {
                out.push_str(&format!(",{}", rep[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub curve: AggregateCurve,
    /// One entry per replicate; `Err` holds the failure message.
    pub records: Vec<std::result::Result<RunRecord, String>>,
}

/// `n` evenly spaced points from 0 to `budget` inclusive.
pub fn default_grid(budget: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![budget];
    }
    (0..n).map(|i| budget * i as f64 / (n - 1) as f64).collect()
}

/// Parses `start:stop:step` into the points `start, start+step, ...` not
/// exceeding `stop` (up to rounding).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("grid must look like start:stop:step, got '{spec}'")));
    }
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse(format!("bad number '{s}' in grid '{spec}'")))
    };
    let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
    if step <= 0.0 || stop < start {
        return Err(Error::Parse(format!("grid '{spec}' needs step > 0 and stop >= start")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

/// `(cost, best)` pairs of a record, left-extended so every event carries
/// the first defined best value.
fn best_trace(record: &RunRecord) -> Result<Vec<(Cost, f64)>> {
    let first = record
        .events
        .iter()
        .find_map(|e| e.best)
        .ok_or_else(|| invalid(format!("{} run has no primary observation", record.method)))?;
    Ok(record.events.iter().map(|e| (e.cost, e.best.unwrap_or(first))).collect())
}

/// Piecewise-constant best-so-far of each record on `grid`, with mean and
/// standard error (sample standard deviation over `√R`).
pub fn export_curves(records: &[RunRecord], grid: &[f64]) -> Result<AggregateCurve> {
    if records.is_empty() {
        return Err(invalid("no run records to aggregate"));
    }
    if grid.is_empty() || grid.iter().any(|c| !c.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("cost grid must be nonempty and strictly increasing"));
    }
    let mut replicates = Vec::with_capacity(records.len());
    for record in records {
        let trace = best_trace(record)?;
        let values: Vec<f64> = grid
            .iter()
            .map(|&c| {
                trace
                    .iter()
                    .take_while(|(cost, _)| cost.as_f64() <= c)
                    .last()
                    .map_or(trace[0].1, |(_, b)| *b)
            })
            .collect();
        replicates.push(values);
    }
    let r = replicates.len() as f64;
    let mut mean = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let m = replicates.iter().map(|v| v[i]).sum::<f64>() / r;
        let se = if replicates.len() > 1 {
            let var = replicates.iter().map(|v| (v[i] - m).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        } else {
            0.0
        };
        mean.push(m);
        stderr.push(se);
    }
    Ok(AggregateCurve {
        grid: grid.to_vec(),
        mean,
        stderr,
        replicates,
    })
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    event: usize,
    cost: Cost,
    task: usize,
    y: f64,
    best: Option<f64>,
    phase: Phase,
    x: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReplicateSummary {
    replicate: usize,
    seed: u64,
    best: Option<f64>,
    total_cost: Option<Cost>,
    final_x: Option<Vec<f64>>,
    error: Option<String>,
}

fn run_file(dir: &Path, r: usize) -> PathBuf {
    dir.join(format!("run_{r:03}.jsonl"))
}

fn write_record(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (i, e) in record.events.iter().enumerate() {
        let line = EventLine {
            event: i,
            cost: e.cost,
            task: e.task,
            y: e.y,
            best: e.best,
            phase: e.phase,
            x: e.x.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_record(path: &Path, method: &str) -> Result<RunRecord> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: EventLine = serde_json::from_str(&line)
            .map_err(|err| Error::Parse(format!("malformed run record {}:{}: {err}", path.display(), n + 1)))?;
        events.push(QueryEvent {
            cost: e.cost,
            task: e.task,
            x: e.x,
            y: e.y,
            best: e.best,
            phase: e.phase,
        });
    }
    let total_cost = events.last().map_or(Cost::ZERO, |e| e.cost);
    Ok(RunRecord {
        method: method.to_string(),
        events,
        steps: Vec::new(),
        final_x: Vec::new(),
        total_cost,
    })
}

/// Reads every `run_*.jsonl` in `dir`, in file-name order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let method = fs::read_to_string(dir.join("config.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.get("method").and_then(|m| m.as_str()).map(String::from))
        .unwrap_or_else(|| "unknown".to_string());
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with(".jsonl"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(invalid(format!("no run records found in {}", dir.display())));
    }
    paths.iter().map(|p| read_record(p, &method)).collect()
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|n| *n > 0)
}

fn run_replicates(config: &ExperimentConfig, problem: &dyn MisProblem) -> Vec<std::result::Result<RunRecord, String>> {
    let one = |r: usize| {
        info!("{} on {}: replicate {r}", config.method, config.problem);
        config
            .method
            .run(problem, &config.replicate_config(r))
            .map_err(|e| e.to_string())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers_from_env() {
            builder = builder.num_threads(n);
        }
        match builder.build() {
            Ok(pool) => pool.install(|| (0..config.replicates).into_par_iter().map(one).collect()),
            Err(e) => {
                warn!("could not build worker pool ({e}); running replicates serially");
                (0..config.replicates).map(one).collect()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..config.replicates).map(one).collect()
    }
}

/// Runs all replicates, writes the artifacts described in the module docs
/// and returns the aggregate on the default grid.
///
/// The output directory is created and `config.json` written before any run
/// starts, so an unwritable path fails fast. Failed replicates are reported
/// in `summary.json` and left out of the aggregate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    let config_json = serde_json::to_string_pretty(config).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(config.out.join("config.json"), config_json + "\n")?;
    let problem = config.problem.build(config.seed)?;

    let records = run_replicates(config, problem.as_ref());

    let mut summaries = Vec::with_capacity(records.len());
    let mut survivors = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let seed = config.seed.wrapping_add(r as u64);
        match rec {
            Ok(record) => {
                write_record(&run_file(&config.out, r), record)?;
                summaries.push(ReplicateSummary {
                    replicate: r,
                    seed,
                    best: record.best(),
                    total_cost: Some(record.total_cost),
                    final_x: Some(record.final_x.clone()),
                    error: None,
                });
                survivors.push(record.clone());
            }
            Err(msg) => {
                warn!("replicate {r} failed: {msg}");
                summaries.push(ReplicateSummary {
                    replicate: r,
                    seed,
                    best: None,
                    total_cost: None,
                    final_x: None,
                    error: Some(msg.clone()),
                });
            }
        }
    }
    let summary = serde_json::to_string_pretty(&summaries).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(config.out.join("summary.json"), summary + "\n")?;
    if survivors.is_empty() {
        return Err(Error::Evaluation("every replicate failed".to_string()));
    }
    let curve = export_curves(&survivors, &default_grid(config.total_budget, DEFAULT_GRID_POINTS))?;
    fs::write(config.out.join("aggregate.csv"), curve.to_csv())?;
    Ok(ExperimentResult { curve, records })
}

/// Loads the runs in `input`, aggregates them on `grid` and writes the CSV
/// table to `output`.
pub fn export_dir(input: &Path, grid: &[f64], output: &Path) -> Result<AggregateCurve> {
    let records = load_records(input)?;
    let curve = export_curves(&records, grid)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(output, curve.to_csv())?;
    Ok(curve)
}
