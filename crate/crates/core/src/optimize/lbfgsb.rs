//! Projected limited-memory BFGS for box-constrained maximization.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiNewtonConfig {
    pub maxiter: usize,
    pub grad_tol: f64,
    /// Relative decrease below which the run is considered converged; 0 disables.
    pub ftol: f64,
    pub history: usize,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        QuasiNewtonConfig {
            maxiter: 200,
            grad_tol: 1e-6,
            ftol: 0.0,
            history: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiNewtonResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// `f` returns the value and its gradient; a non-finite value marks the
/// point as unusable and the line search backs off. Every evaluated point
/// lies inside the box.
pub fn bounded_quasi_newton<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &QuasiNewtonConfig,
) -> QuasiNewtonResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let k = x0.len();
    assert_eq!(lower.len(), k);
    assert_eq!(upper.len(), k);
    // Internally minimize phi = -f.
    let mut eval = |x: &[f64]| {
        let (v, g) = f(x);
        let g: Vec<f64> = g.iter().map(|v| -v).collect();
        (-v, g)
    };
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = eval(&x);
    let mut evaluations = 1;
    let done = |x: Vec<f64>, fx: f64, converged: bool, iterations: usize, evaluations: usize| QuasiNewtonResult {
        x,
        value: -fx,
        converged,
        iterations,
        evaluations,
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return done(x, f64::INFINITY, false, 0, evaluations);
    }
    let diag: f64 = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| (u - l).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history);

    for iter in 0..config.maxiter {
        let pg_norm = (0..k)
            .map(|i| ((x[i] - g[i]).clamp(lower[i], upper[i]) - x[i]).abs())
            .fold(0.0, f64::max);
        if pg_norm <= config.grad_tol {
            return done(x, fx, true, iter, evaluations);
        }
        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        let free: Vec<bool> = (0..k)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(a, f)| if *f { *a } else { 0.0 }).collect() };

        let mut d = mask(&g);
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(&mask(s), &d);
            let ym = mask(y);
            for i in 0..k {
                d[i] -= a * ym[i];
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.back() {
            let yy = dot(y, y);
            if yy > 0.0 {
                let gamma = dot(s, y) / yy;
                d.iter_mut().for_each(|v| *v *= gamma);
            }
        } else {
            let gn = dot(&d, &d).sqrt();
            if gn > 0.0 {
                let scale = 0.1 * diag.max(1e-12) / gn;
                d.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(&mask(y), &d);
            let sm = mask(s);
            for i in 0..k {
                d[i] += (a - b) * sm[i];
            }
        }
        let mut d: Vec<f64> = mask(&d).iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            mem.clear();
            let gm = mask(&g);
            let gn = dot(&gm, &gm).sqrt();
            let scale = 0.1 * diag.max(1e-12) / gn.max(1e-300);
            d = gm.iter().map(|v| -v * scale).collect();
        }

        // Projected backtracking line search with Armijo condition.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut xn, lower, upper);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let slope = dot(&g, &step);
            if step.iter().all(|v| *v == 0.0) || slope >= 0.0 {
                break;
            }
            let (fn_, gn) = eval(&xn);
            evaluations += 1;
            let finite = fn_.is_finite() && gn.iter().all(|v| v.is_finite());
            if finite && fn_ <= fx + 1e-4 * slope {
                accepted = Some((xn, fn_, gn, step));
                break;
            }
            let t_new = if finite {
                let denom = 2.0 * (fn_ - fx - slope);
                if denom > 0.0 {
                    -slope * t / denom
                } else {
                    0.5 * t
                }
            } else {
                0.1 * t
            };
            t = t_new.clamp(0.1 * t, 0.5 * t);
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            return done(x, fx, false, iter, evaluations);
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(1e-300).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if mem.len() == config.history {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let fprev = fx;
        x = xn;
        fx = fn_;
        g = gn;
        if config.ftol > 0.0 && (fprev - fx) <= config.ftol * fprev.abs().max(fx.abs()).max(1.0) {
            return done(x, fx, true, iter + 1, evaluations);
        }
    }
    let pg_norm = (0..k)
        .map(|i| ((x[i] - g[i]).clamp(lower[i], upper[i]) - x[i]).abs())
        .fold(0.0, f64::max);
    done(x, fx, pg_norm <= config.grad_tol, config.maxiter, evaluations)
}
