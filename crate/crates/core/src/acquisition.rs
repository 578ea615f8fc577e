//! Acquisition functions that measure information about the primary-task
//! gradient at the current iterate.
//!
//! Conditioning a GP on a new input changes its covariance independently of
//! the value later observed there. The post-query gradient covariance is
//! therefore a rank-one downdate of the current one,
//! `Σ'_new = Σ' - v vᵀ / s`, where `v` is the cross-covariance between the
//! gradient and the fantasy observation and `s` is the fantasy's predictive
//! variance. [`AnchorBelief`] caches everything that does not depend on the
//! candidate so each evaluation costs one triangular solve.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::Domain;
use crate::error::{invalid, Error, Result};
use crate::gp::{GpPosterior, GradientBelief, Kernel};
use crate::optim::{compass_maximize, halton};

/// `ln(2πe)`.
const LN_2PI_E: f64 = 2.837_877_066_409_345_5;

/// Relative eigenvalue floor applied before taking log-determinants of
/// nearly singular gradient covariances.
pub const DETERMINANT_FLOOR: f64 = 1e-10;

/// Safety factor keeping the determinant-lemma path away from the floor.
const LEMMA_MARGIN: f64 = 100.0;

/// Exact query cost, stored as a rational so that cumulative sums never drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(Ratio<i64>);

impl Cost {
    pub const ZERO: Cost = Cost(Ratio::new_raw(0, 1));

    pub fn from_integer(v: i64) -> Self {
        Cost(Ratio::from_integer(v))
    }

    /// Nearest simple rational to `v`.
    pub fn from_f64(v: f64) -> Result<Self> {
        if !v.is_finite() || v < 0.0 {
            return Err(invalid(format!("cost must be finite and nonnegative, got {v}")));
        }
        Ratio::approximate_float(v)
            .map(Cost)
            .ok_or_else(|| invalid(format!("cost {v} is not representable")))
    }

    pub fn as_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Cost {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Cost {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Cost::from_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Constant per-task query cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    costs: Vec<Cost>,
}

impl CostModel {
    pub fn new(costs: &[f64]) -> Result<Self> {
        if costs.is_empty() {
            return Err(invalid("cost model needs at least one task"));
        }
        let costs = costs
            .iter()
            .map(|c| {
                if *c > 0.0 {
                    Cost::from_f64(*c)
                } else {
                    Err(invalid(format!("query costs must be positive, got {c}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { costs })
    }

    pub fn uniform(num_tasks: usize) -> Self {
        Self {
            costs: vec![Cost::from_integer(1); num_tasks.max(1)],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.costs.len()
    }

    pub fn cost(&self, task: usize) -> Cost {
        self.costs[task]
    }

    pub fn cost_f64(&self, task: usize) -> f64 {
        self.costs[task].as_f64()
    }

    pub fn cheapest(&self) -> Cost {
        *self.costs.iter().min().expect("nonempty")
    }
}

/// `log|Σ|` for a symmetric PSD matrix, flooring eigenvalues at
/// `DETERMINANT_FLOOR · mean(diag Σ)` when the matrix is numerically singular.
pub fn log_det_psd(sigma: &DMatrix<f64>) -> Result<f64> {
    let d = sigma.nrows();
    if d == 0 {
        return Ok(0.0);
    }
    let mean_diag = sigma.trace() / d as f64;
    let floor = (DETERMINANT_FLOOR * mean_diag.abs()).max(f64::MIN_POSITIVE);
    if let Some(c) = sigma.clone().cholesky() {
        let diag = c.l_dirty().diagonal();
        if diag.iter().all(|v| v * v >= floor) {
            return Ok(2.0 * diag.iter().map(|v| v.ln()).sum::<f64>());
        }
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-8 * mean_diag.abs().max(1.0) {
        return Err(Error::NotPositiveSemiDefinite { min_eigenvalue: min });
    }
    Ok(eig.eigenvalues.iter().map(|v| v.max(floor).ln()).sum())
}

/// Differential entropy `½ log((2πe)^d |Σ'|)` of a Gaussian gradient belief.
pub fn gradient_entropy(belief: &GradientBelief) -> Result<f64> {
    let d = belief.dim() as f64;
    Ok(0.5 * (d * LN_2PI_E + log_det_psd(&belief.covariance)?))
}

/// Gradient belief at an anchor point plus the cached quantities needed to
/// evaluate one-step-ahead information about it for any candidate query.
#[derive(Debug, Clone)]
pub struct AnchorBelief<'a> {
    posterior: &'a GpPosterior,
    anchor: Vec<f64>,
    task: usize,
    belief: GradientBelief,
    /// `L⁻¹ ∇k(X, anchor)`, `n × d`.
    projected: DMatrix<f64>,
    log_det: f64,
    /// Cholesky factor of the gradient covariance when it is well
    /// conditioned; enables the determinant-lemma shortcut.
    factor: Option<Cholesky<f64, Dyn>>,
}

impl<'a> AnchorBelief<'a> {
    /// Belief about `∇_x f(anchor, task)` under `posterior`.
    pub fn new(posterior: &'a GpPosterior, anchor: &[f64], task: usize) -> Result<Self> {
        let belief = posterior.gradient_belief(anchor, task)?;
        let projected = if posterior.is_empty() {
            DMatrix::zeros(0, anchor.len())
        } else {
            posterior.solve_lower_matrix(&posterior.gradient_cross_covariance(anchor, task))
        };
        let log_det = log_det_psd(&belief.covariance)?;
        let d = belief.dim();
        let floor = DETERMINANT_FLOOR * belief.trace() / d.max(1) as f64;
        let factor = belief
            .covariance
            .clone()
            .cholesky()
            .filter(|c| c.l_dirty().diagonal().iter().all(|v| v * v >= LEMMA_MARGIN * floor));
        Ok(Self {
            posterior,
            anchor: anchor.to_vec(),
            task,
            belief,
            projected,
            log_det,
            factor,
        })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn posterior(&self) -> &GpPosterior {
        self.posterior
    }

    pub fn belief(&self) -> &GradientBelief {
        &self.belief
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn entropy(&self) -> f64 {
        0.5 * (self.belief.dim() as f64 * LN_2PI_E + self.log_det)
    }

    /// Cross-covariance `v` between the gradient and a fantasy observation
    /// at `(x, task)`, and that observation's predictive variance `s`.
    fn fantasy(&self, x: &[f64], task: usize) -> (DVector<f64>, f64) {
        let kernel: &Kernel = self.posterior.kernel();
        let d = kernel.dim();
        let mut cross = vec![0.0; d];
        kernel.grad_first(&self.anchor, self.task, x, task, &mut cross);
        let mut v = DVector::from_vec(cross);
        let mut s = kernel.prior_variance(task) + self.posterior.observation_variance(task);
        if !self.posterior.is_empty() {
            let w = self.posterior.solve_lower(&self.posterior.cross_covariance(x, task));
            v -= self.projected.transpose() * &w;
            s -= w.dot(&w);
        }
        (v, s.max(self.posterior.jitter()).max(f64::MIN_POSITIVE))
    }

    /// Gradient covariance after conditioning on a fantasy query at `(x, task)`.
    pub fn conditioned_covariance(&self, x: &[f64], task: usize) -> DMatrix<f64> {
        let (v, s) = self.fantasy(x, task);
        let mut cov = self.belief.covariance.clone();
        cov.ger(-1.0 / s, &v, &v, 1.0);
        (&cov + cov.transpose()) * 0.5
    }

    /// Expected entropy reduction of the gradient from querying `(x, task)`:
    /// `½ log|Σ'| - ½ log|Σ'_new|`.
    ///
    /// When the current covariance is well conditioned this uses the
    /// determinant lemma `|Σ' - v vᵀ/s| = |Σ'| (1 - vᵀΣ'⁻¹v / s)`, which
    /// costs `O(d²)` instead of a fresh factorization. Near-singular cases
    /// go through [`log_det_psd`] and its floor.
    pub fn entropy_reduction(&self, x: &[f64], task: usize) -> Result<f64> {
        let (v, s) = self.fantasy(x, task);
        if let Some(factor) = &self.factor {
            let u = factor.l_dirty().solve_lower_triangular(&v).expect("nonsingular factor");
            let q = u.norm_squared() / s;
            if (0.0..=1.0 - 1e-6).contains(&q) {
                return Ok(-0.5 * (-q).ln_1p());
            }
        }
        let mut cov = self.belief.covariance.clone();
        cov.ger(-1.0 / s, &v, &v, 1.0);
        let after = log_det_psd(&((&cov + cov.transpose()) * 0.5))?;
        Ok(0.5 * (self.log_det - after))
    }

    /// `Tr Σ' - Tr Σ'_new = |v|² / s`.
    pub fn trace_reduction(&self, x: &[f64], task: usize) -> f64 {
        let (v, s) = self.fantasy(x, task);
        v.norm_squared() / s
    }

    fn check_candidate(&self, x: &[f64], task: usize) -> Result<()> {
        self.posterior.kernel().check_point(x)?;
        self.posterior.kernel().check_task(task)
    }
}

/// Gradient entropy search: entropy reduction of `∇f(anchor, 0)` from a
/// primary-task query at `candidate`.
pub fn ges(candidate: &[f64], anchor: &[f64], posterior: &GpPosterior) -> Result<f64> {
    let a = AnchorBelief::new(posterior, anchor, 0)?;
    a.check_candidate(candidate, 0)?;
    a.entropy_reduction(candidate, 0)
}

/// Cost-aware gradient entropy search: entropy reduction of the primary-task
/// gradient at `anchor` from a query of `task` at `candidate`, per unit cost.
pub fn cages(
    candidate: &[f64],
    task: usize,
    anchor: &[f64],
    posterior: &GpPosterior,
    costs: &CostModel,
) -> Result<f64> {
    if task >= costs.num_tasks() {
        return Err(invalid(format!("no cost declared for task {task}")));
    }
    let a = AnchorBelief::new(posterior, anchor, 0)?;
    a.check_candidate(candidate, task)?;
    Ok(a.entropy_reduction(candidate, task)? / costs.cost_f64(task))
}

/// Reduction in the trace of the primary-task gradient covariance from a
/// primary-task query at `candidate`.
pub fn gibo_trace(candidate: &[f64], anchor: &[f64], posterior: &GpPosterior) -> Result<f64> {
    let a = AnchorBelief::new(posterior, anchor, 0)?;
    a.check_candidate(candidate, 0)?;
    Ok(a.trace_reduction(candidate, 0))
}

/// Which acquisition function to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionKind {
    /// Determinant criterion, primary task only.
    Ges,
    /// Determinant criterion per unit cost, over every task.
    Cages,
    /// Trace criterion, primary task only.
    GiboTrace,
}

impl AcquisitionKind {
    fn tasks(&self, costs: &CostModel) -> std::ops::Range<usize> {
        match self {
            AcquisitionKind::Cages => 0..costs.num_tasks(),
            _ => 0..1,
        }
    }

    /// Value of this acquisition at `(x, task)`; `-inf` if it cannot be evaluated.
    pub fn evaluate(&self, belief: &AnchorBelief<'_>, costs: &CostModel, x: &[f64], task: usize) -> f64 {
        let v = match self {
            AcquisitionKind::Ges => belief.entropy_reduction(x, task).unwrap_or(f64::NEG_INFINITY),
            AcquisitionKind::Cages => belief
                .entropy_reduction(x, task)
                .map(|v| v / costs.cost_f64(task))
                .unwrap_or(f64::NEG_INFINITY),
            AcquisitionKind::GiboTrace => belief.trace_reduction(x, task),
        };
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }
}

/// Where candidate queries may be placed relative to the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionPolicy {
    /// Box of half-width `lengthscales × l_i` around the anchor, clipped to the domain.
    Local { lengthscales: f64 },
    /// The whole domain.
    Full,
}

impl Default for RegionPolicy {
    fn default() -> Self {
        RegionPolicy::Local { lengthscales: 1.0 }
    }
}

impl RegionPolicy {
    pub fn region(&self, domain: &Domain, anchor: &[f64], kernel: &Kernel) -> Domain {
        match self {
            RegionPolicy::Full => domain.clone(),
            RegionPolicy::Local { lengthscales } => {
                let half: Vec<f64> = kernel.lengthscales().iter().map(|l| l * lengthscales).collect();
                domain.neighbourhood(anchor, &half)
            }
        }
    }
}

/// Multi-start search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSearch {
    /// Space-filling candidates screened per task.
    pub raw_samples: usize,
    /// Best screened candidates refined by compass search.
    pub starts: usize,
    /// Poll rounds per refinement.
    pub max_polls: usize,
    /// Refinement stops once steps shrink below this fraction of the region width.
    pub min_step: f64,
}

impl Default for AcquisitionSearch {
    fn default() -> Self {
        Self {
            raw_samples: 256,
            starts: 8,
            max_polls: 50,
            min_step: 1e-4,
        }
    }
}

/// Maximizer of an acquisition function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionQuery {
    pub candidate: Vec<f64>,
    pub task: usize,
    pub anchor: Vec<f64>,
    pub value: f64,
}

/// Higher value first, then lower task, then lexicographically smaller point.
fn better(a: (f64, usize, &[f64]), b: (f64, usize, &[f64])) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => match a.1.cmp(&b.1) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a
                .2
                .iter()
                .zip(b.2)
                .find_map(|(x, y)| x.partial_cmp(y).filter(|o| *o != Ordering::Equal))
                .map(|o| o == Ordering::Less)
                .unwrap_or(false),
        },
    }
}

/// Maximizes `kind` over `region × tasks`.
///
/// For every task, screens `raw_samples` shifted Halton points plus the
/// anchor, then refines the best `starts` of them by compass search. The
/// winner is chosen with a deterministic tie-break (value, then lower task
/// index, then lexicographic point), so the result depends only on the
/// inputs and `seed`.
pub fn optimize_acquisition(
    kind: AcquisitionKind,
    belief: &AnchorBelief<'_>,
    costs: &CostModel,
    region: &Domain,
    search: &AcquisitionSearch,
    seed: u64,
) -> Result<AcquisitionQuery> {
    let d = region.dim();
    if belief.anchor().len() != d {
        return Err(invalid("anchor and search region dimensions differ"));
    }
    if let Some(n) = belief.posterior().kernel().num_tasks() {
        if kind == AcquisitionKind::Cages && n < costs.num_tasks() {
            return Err(invalid("cost model declares more tasks than the kernel models"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut candidates: Vec<Vec<f64>> = halton(search.raw_samples, d, &shift)
        .iter()
        .map(|u| region.from_unit(u))
        .collect();
    let mut anchor = belief.anchor().to_vec();
    region.clip(&mut anchor);
    candidates.push(anchor);

    let mut best: Option<AcquisitionQuery> = None;
    for task in kind.tasks(costs) {
        let f = |x: &[f64]| kind.evaluate(belief, costs, x, task);
        let mut scored: Vec<(f64, usize)> = candidates.iter().enumerate().map(|(i, x)| (f(x), i)).collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        for &(raw_value, i) in scored.iter().take(search.starts.max(1)) {
            let (x, value) = if raw_value.is_finite() {
                compass_maximize(f, &candidates[i], region.lower(), region.upper(), search.max_polls, search.min_step)
            } else {
                (candidates[i].clone(), raw_value)
            };
            let replace = match &best {
                None => true,
                Some(b) => better((value, task, &x), (b.value, b.task, &b.candidate)),
            };
            if replace {
                best = Some(AcquisitionQuery {
                    candidate: x,
                    task,
                    anchor: belief.anchor().to_vec(),
                    value,
                });
            }
        }
    }
    best.ok_or_else(|| invalid("acquisition search produced no candidates"))
}
