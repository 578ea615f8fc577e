//! WebAssembly bindings for a small interactive page.
//!
//! Each exported function has a plain-Rust counterpart in this crate that
//! returns a `cages::Result`, so the numbers shown in the browser are the
//! ones checked by the native tests.

use cages::acquisition::AnchorBelief;
use cages::benchmarks::{Forrester, MisProblem, Quadratic};
use cages::gp::{Dataset, GpPosterior, Kernel, NoiseModel, Observation, Standardization};
use cages::harness::MethodId;
use cages::local_loop::{GradientRule, OptimizerConfig, RunRecord};
use cages::{Error, Result};
use wasm_bindgen::prelude::*;

/// Observation noise variance (standardized units) used by the 1-d views.
const NOISE: f64 = 1e-6;

/// Columns per grid point returned by [`posterior_rows`].
pub const SLICE_COLUMNS: usize = 6;
/// Columns per grid point returned by [`acquisition_rows`].
pub const ACQUISITION_COLUMNS: usize = 3;

fn grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArgument("need at least two grid points".into()));
    }
    Ok((0..points).map(|i| i as f64 / (points - 1) as f64).collect())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Forrester observations at `xs`, standardized, with an SE posterior.
fn forrester_posterior(xs: &[f64], lengthscale: f64) -> Result<(GpPosterior, Standardization)> {
    let problem = Forrester::new();
    for &x in xs {
        check_unit("observation", x)?;
    }
    let rows = xs
        .iter()
        .map(|&x| {
            Ok(Observation {
                x: vec![x],
                task: 0,
                y: problem.evaluate(&[x], 0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::from_rows(rows)?;
    let s = Standardization::fit(&data);
    let kernel = Kernel::se_ard(vec![lengthscale], 1.0)?;
    let gp = GpPosterior::new(&data.standardized(&s), &kernel, &NoiseModel::uniform(1, NOISE)?)?;
    Ok((gp, s))
}

/// For each of `points` grid locations on `[0, 1]`: `x`, the Forrester value,
/// posterior mean and standard deviation, and the mean and standard
/// deviation of the posterior derivative. Flattened row-major.
pub fn posterior_rows(xs: &[f64], lengthscale: f64, points: usize) -> Result<Vec<f64>> {
    let (gp, s) = forrester_posterior(xs, lengthscale)?;
    let mut out = Vec::with_capacity(points * SLICE_COLUMNS);
    for x in grid(points)? {
        let (m, v) = gp.predict(&[x], 0)?;
        let g = gp.gradient_belief(&[x], 0)?.scaled(s.scale);
        out.extend([
            x,
            Forrester::value(x),
            s.inverse(m),
            s.scale * v.max(0.0).sqrt(),
            g.mean[0],
            g.covariance[(0, 0)].max(0.0).sqrt(),
        ]);
    }
    Ok(out)
}

/// Entropy and trace reductions of the derivative at `anchor` for a
/// hypothetical query at each grid point: rows of `x, entropy, trace`.
/// The trace column is in standardized units.
pub fn acquisition_rows(xs: &[f64], anchor: f64, lengthscale: f64, points: usize) -> Result<Vec<f64>> {
    check_unit("anchor", anchor)?;
    let (gp, _) = forrester_posterior(xs, lengthscale)?;
    let belief = AnchorBelief::new(&gp, &[anchor], 0)?;
    let mut out = Vec::with_capacity(points * ACQUISITION_COLUMNS);
    for x in grid(points)? {
        out.extend([x, belief.entropy_reduction(&[x], 0)?, belief.trace_reduction(&[x], 0)]);
    }
    Ok(out)
}

/// One optimizer run on a 2-d quadratic with a cheap source (an exact copy
/// when `biased` is false, a sine-perturbed one otherwise).
pub fn quadratic_run(method: &str, biased: bool, seed: u64, budget: f64) -> Result<RunRecord> {
    let method: MethodId = method.parse()?;
    let problem = if biased { Quadratic::biased(2)? } else { Quadratic::duplicated(2)? };
    let config = OptimizerConfig {
        step_size: 0.2,
        rule: GradientRule::Plain,
        outer_iterations: usize::MAX,
        init_budget: 20.0,
        total_budget: Some(budget),
        seed,
        ..OptimizerConfig::default()
    };
    method.run(&problem, &config)
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Browser entry point for [`posterior_rows`].
#[wasm_bindgen(js_name = posteriorSlice)]
pub fn posterior_slice(xs: &[f64], lengthscale: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    posterior_rows(xs, lengthscale, points).map_err(js)
}

/// Browser entry point for [`acquisition_rows`].
#[wasm_bindgen(js_name = acquisitionProfile)]
pub fn acquisition_profile(xs: &[f64], anchor: f64, lengthscale: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    acquisition_rows(xs, anchor, lengthscale, points).map_err(js)
}

/// Browser entry point for [`quadratic_run`]; returns the run record as JSON.
#[wasm_bindgen(js_name = optimizeQuadratic)]
pub fn optimize_quadratic(method: &str, biased: bool, seed: u32, budget: f64) -> std::result::Result<String, JsError> {
    let record = quadratic_run(method, biased, u64::from(seed), budget).map_err(js)?;
    serde_json::to_string(&record).map_err(|e| JsError::new(&e.to_string()))
}
