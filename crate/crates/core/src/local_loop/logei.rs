use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::session::{Phase, Session};
use super::{initial_design, initial_hyperparameters, Model, OptimizerConfig, RunRecord};
use crate::acquisition::{AcquisitionSearch, Cost};
use crate::benchmarks::MisProblem;
use crate::domain::Domain;
use crate::error::Result;
use crate::gp::Standardization;
use crate::optim::{compass_maximize, halton};

/// Value returned when no improvement is possible.
pub const LOG_EI_FLOOR: f64 = -1e10;

/// Below this standardized improvement the Mills-ratio expansion is used.
const TAIL_START: f64 = -5.0;
const FRACTION_TERMS: usize = 120;

fn ln_phi(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// `ln(φ(z) + zΦ(z))`, accurate far into the lower tail.
fn ln_h(z: f64) -> f64 {
    if z > TAIL_START {
        let cdf = 0.5 * libm::erfc(-z / SQRT_2);
        let h = ln_phi(z).exp() + z * cdf;
        return if h > 0.0 { h.ln() } else { LOG_EI_FLOOR };
    }
    // With t = -z: h = φ(t)·m(t)·c(t), where the Mills ratio is
    // m = 1/(t + 1/(t + 2/(t + ...))) and c = 1/(t + 2/(t + 3/(t + ...))).
    let t = -z;
    let mut g = t;
    for k in (2..=FRACTION_TERMS).rev() {
        g = t + k as f64 / g;
    }
    let c = 1.0 / g;
    let m = 1.0 / (t + 1.0 / g);
    ln_phi(t) + m.ln() + c.ln()
}

/// Logarithm of expected improvement below `incumbent` for a Gaussian
/// prediction `N(mean, std²)` (minimization). With zero spread it is
/// `ln(incumbent − mean)` when that is positive and [`LOG_EI_FLOOR`] otherwise.
pub fn log_expected_improvement(mean: f64, std: f64, incumbent: f64) -> f64 {
    let improvement = incumbent - mean;
    if !(std.is_finite() && std > 0.0) || std < 1e-300 {
        return if improvement > 0.0 { improvement.ln() } else { LOG_EI_FLOOR };
    }
    let v = std.ln() + ln_h(improvement / std);
    if v.is_nan() {
        LOG_EI_FLOOR
    } else {
        v.max(LOG_EI_FLOOR)
    }
}

/// Screens a shifted Halton set over `domain` and polishes the best points.
fn maximize<F: Fn(&[f64]) -> f64>(f: F, domain: &Domain, search: &AcquisitionSearch, extra: &[Vec<f64>], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..domain.dim()).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut candidates: Vec<Vec<f64>> = halton(search.raw_samples, domain.dim(), &shift)
        .iter()
        .map(|u| domain.from_unit(u))
        .collect();
    candidates.extend(extra.iter().cloned());
    let mut scored: Vec<(f64, usize)> = candidates.iter().enumerate().map(|(i, x)| (f(x), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &(_, i) in scored.iter().take(search.starts.max(1)) {
        let (x, v) = compass_maximize(&f, &candidates[i], domain.lower(), domain.upper(), search.max_polls, search.min_step);
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, x));
        }
    }
    best.map(|(_, x)| x).unwrap_or_else(|| domain.center())
}

/// Global Bayesian optimization on the primary task with log expected
/// improvement. The recorded final point is the minimizer of the posterior
/// mean; `best` in the events is the running minimum of observations.
pub fn run_logei(problem: &dyn MisProblem, config: &OptimizerConfig) -> Result<RunRecord> {
    config.validate()?;
    let domain = problem.domain().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut session = Session::new(problem, config.total_budget)?;
    initial_design(&mut session, &[0], Cost::from_f64(config.init_budget)?, &mut rng)?;
    let mut model = Model {
        hyper: initial_hyperparameters(&domain, 1, config)?,
        standardization: Standardization::IDENTITY,
        improved: false,
    };

    for _ in 0..config.outer_iterations {
        let next = if session.data().is_empty() {
            domain.sample(&mut rng)
        } else {
            model.refit(session.data(), config, &domain, rng.next_u64());
            let gp = model.posterior(session.data(), config)?;
            let incumbent = model.standardization.forward(session.best().expect("primary data exists"));
            let acq = |x: &[f64]| match gp.predict(x, 0) {
                Ok((m, v)) => log_expected_improvement(m, v.sqrt(), incumbent),
                Err(_) => f64::NEG_INFINITY,
            };
            maximize(acq, &domain, &config.search, &[], rng.next_u64())
        };
        if session.query(&next, 0, Phase::Global)?.is_none() {
            break;
        }
    }

    let recommendation = if session.data().is_empty() {
        domain.center()
    } else {
        model.refit(session.data(), config, &domain, rng.next_u64());
        let gp = model.posterior(session.data(), config)?;
        let observed: Vec<Vec<f64>> = session.data().rows().iter().map(|r| r.x.clone()).collect();
        let neg_mean = |x: &[f64]| gp.predict(x, 0).map(|(m, _)| -m).unwrap_or(f64::NEG_INFINITY);
        maximize(neg_mean, &domain, &config.search, &observed, rng.next_u64())
    };
    Ok(session.finish("logei", Vec::new(), recommendation))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct `ln(σ(zΦ(z) + φ(z)))` by numerical integration of the
    /// improvement against the normal density.
    fn quadrature(mean: f64, std: f64, incumbent: f64) -> f64 {
        let n = 200_000;
        let lo = mean - 12.0 * std;
        let hi = incumbent.min(mean + 12.0 * std);
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let y = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let dens = (-(y - mean).powi(2) / (2.0 * std * std)).exp() / (std * (2.0 * PI).sqrt());
            s += w * (incumbent - y) * dens;
        }
        (s * h).ln()
    }

    #[test]
    fn matches_quadrature_in_the_body() {
        for (m, s, inc) in [(0.0, 1.0, 0.0), (0.5, 0.3, 0.2), (-1.0, 2.0, 0.5), (1.0, 0.5, 0.0)] {
            let a = log_expected_improvement(m, s, inc);
            let b = quadrature(m, s, inc);
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn tail_expansion_is_continuous() {
        let below = ln_h(TAIL_START - 1e-9);
        let above = ln_h(TAIL_START + 1e-9);
        assert!((below - above).abs() < 1e-7, "{below} vs {above}");
        // asymptotically h(z) ~ φ(z)/z²
        let z: f64 = -40.0;
        let approx = ln_phi(z) - 2.0 * z.abs().ln();
        assert!((ln_h(z) - approx).abs() < 1e-2);
        assert!(ln_h(-1e3).is_finite());
    }

    #[test]
    fn degenerate_cases() {
        let v = log_expected_improvement(-3.0, 1e-9, 2.0);
        assert!((v - 5f64.ln()).abs() < 1e-9);
        assert_eq!(log_expected_improvement(3.0, 0.0, 2.0), LOG_EI_FLOOR);
        assert_eq!(log_expected_improvement(2.0, 0.0, 2.0), LOG_EI_FLOOR);
    }
}
