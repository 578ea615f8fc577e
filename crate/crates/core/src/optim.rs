//! Small numerical optimizers used internally: a projected limited-memory
//! BFGS for box-constrained smooth minimization (hyperparameter fitting), a
//! compass search for derivative-free maximization over boxes (acquisition
//! functions), and a Halton sequence for space-filling start points.

use std::collections::VecDeque;

/// Result of [`minimize_bounded`].
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    pub history: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub value_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            history: 8,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-10,
        }
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zeroes gradient components that point out of the box at active bounds.
fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((xi, gi), (l, u))| {
            if (*xi <= *l && *gi > 0.0) || (*xi >= *u && *gi < 0.0) {
                0.0
            } else {
                *gi
            }
        })
        .collect()
}

/// Minimizes `objective` over the box `[lower, upper]`.
///
/// `objective` returns the value and gradient, or `None` where it cannot be
/// evaluated (treated as +inf by the line search). Directions come from the
/// L-BFGS two-loop recursion restricted to variables that are not held at a
/// bound; steps are projected back onto the box and accepted by an Armijo
/// backtracking test.
pub fn minimize_bounded<F>(
    mut objective: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LbfgsOptions,
) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = objective(&x)?;
    if !fx.is_finite() {
        return None;
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let pg = projected_gradient(&x, &g, lower, upper);
        let pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if pg_norm < opts.gradient_tolerance {
            converged = true;
            break;
        }
        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p != 0.0 || *gi == 0.0).collect();

        // two-loop recursion on the free subspace
        let mut q: Vec<f64> = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                if free[i] {
                    q[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            if gamma.is_finite() && gamma > 0.0 {
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        } else {
            let scale = 1.0 / pg_norm.max(1.0);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for i in 0..n {
                if free[i] {
                    q[i] += (a - b) * s[i];
                }
            }
        }
        let mut dir: Vec<f64> = q
            .iter()
            .zip(&free)
            .map(|(v, f)| if *f { -v } else { 0.0 })
            .collect();
        if dot(&dir, &pg) >= 0.0 {
            history.clear();
            let scale = 1.0 / pg_norm.max(1.0);
            dir = pg.iter().map(|v| -v * scale).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, lower, upper);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            let decrease = dot(&g, &moved);
            if decrease >= 0.0 {
                step *= 0.5;
                continue;
            }
            if let Some((ft, gt)) = objective(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == opts.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - f_new).abs() / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel < opts.value_tolerance {
            converged = true;
            break;
        }
    }
    Some(Minimum {
        x,
        value: fx,
        iterations,
        converged,
    })
}

/// Derivative-free maximization over a box by compass (coordinate pattern)
/// search: poll `±step_i` along each axis, move to the first improving poll
/// point, and halve all steps when no poll improves.
///
/// Returns the best point and value after at most `max_polls` poll rounds or
/// once every step has shrunk below `min_step_fraction` of its box width.
pub fn compass_maximize<F>(
    mut objective: F,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_polls: usize,
    min_step_fraction: f64,
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = start.to_vec();
    project(&mut x, lower, upper);
    let mut fx = objective(&x);
    let widths: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
    let mut steps: Vec<f64> = widths.iter().map(|w| 0.25 * w).collect();
    let mut trial = x.clone();

    for _ in 0..max_polls {
        if steps
            .iter()
            .zip(&widths)
            .all(|(s, w)| *s <= min_step_fraction * w || *w == 0.0)
        {
            break;
        }
        let mut improved = false;
        'poll: for i in 0..x.len() {
            if widths[i] == 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                trial.copy_from_slice(&x);
                trial[i] = (x[i] + sign * steps[i]).clamp(lower[i], upper[i]);
                if trial[i] == x[i] {
                    continue;
                }
                let ft = objective(&trial);
                if ft > fx {
                    x.copy_from_slice(&trial);
                    fx = ft;
                    improved = true;
                    break 'poll;
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    (x, fx)
}

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut result = 0.0;
    while index > 0 {
        result += (index % base as u64) as f64 * inv;
        index /= base as u64;
        inv /= b;
    }
    result
}

/// `count` points of the `dim`-dimensional Halton sequence in the unit cube,
/// rotated by `shift` (Cranley-Patterson randomization, one offset per
/// dimension). Dimensions beyond the built-in prime table reuse primes with
/// a different skip.
pub fn halton(count: usize, dim: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let base = PRIMES[j % PRIMES.len()];
                    let skip = 1 + 17 * (j / PRIMES.len()) as u64;
                    let v = radical_inverse(i as u64 + skip, base) + shift.get(j).copied().unwrap_or(0.0);
                    v - v.floor()
                })
                .collect()
        })
        .collect()
}
