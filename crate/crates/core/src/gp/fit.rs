use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::lml::{lml_and_grad, params_to_theta, theta_to_params};
use crate::gp::{Dataset, GpModel, KernelParams, ModelList};
use crate::optimize::lbfgsb::{bounded_quasi_newton, QuasiNewtonConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub num_restarts: usize,
    pub seed: u64,
    pub maxiter: usize,
    pub grad_tol: f64,
    /// Box used to normalize inputs; defaults to the data range.
    pub input_bounds: Option<Vec<(f64, f64)>>,
    /// Replaces the default first start point.
    pub warm_start: Option<KernelParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            num_restarts: 8,
            seed: 0,
            maxiter: 200,
            grad_tol: 1e-5,
            input_bounds: None,
            warm_start: None,
        }
    }
}

const LS_BOUNDS: (f64, f64) = (1e-3, 1e3);
const OUTPUTSCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
const MEAN_BOUNDS: (f64, f64) = (-10.0, 10.0);
const NOISE_BOUNDS: (f64, f64) = (1e-6, 1.0);

struct Scaling {
    lo: Vec<f64>,
    range: Vec<f64>,
    y_mean: f64,
    y_std: f64,
}

impl Scaling {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>, bounds: Option<&[(f64, f64)]>) -> Result<Self> {
        let d = x.ncols();
        let (lo, range) = match bounds {
            Some(b) => {
                if b.len() != d {
                    return Err(Error::Shape(format!("{} input bounds for {d} dimensions", b.len())));
                }
                if b.iter().any(|(l, u)| !(u > l)) {
                    return Err(Error::Domain("input bounds need lower < upper".into()));
                }
                (b.iter().map(|b| b.0).collect(), b.iter().map(|b| b.1 - b.0).collect())
            }
            None => {
                let mut lo = Vec::with_capacity(d);
                let mut range = Vec::with_capacity(d);
                for c in x.column_iter() {
                    let mn = c.min();
                    let mx = c.max();
                    lo.push(mn);
                    range.push(if mx > mn { mx - mn } else { 1.0 });
                }
                (lo, range)
            }
        };
        let n = y.len() as f64;
        let y_mean = y.mean();
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_std = if var.sqrt() > 1e-12 * y_mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
        Ok(Scaling { lo, range, y_mean, y_std })
    }

    fn normalize(&self, p: &KernelParams) -> KernelParams {
        let s2 = self.y_std * self.y_std;
        KernelParams {
            lengthscales: p.lengthscales.iter().zip(&self.range).map(|(l, r)| l / r).collect(),
            outputscale: p.outputscale / s2,
            mean_const: (p.mean_const - self.y_mean) / self.y_std,
            noise_var_hom: p.noise_var_hom / s2,
        }
    }

    fn denormalize(&self, p: &KernelParams) -> KernelParams {
        let s2 = self.y_std * self.y_std;
        KernelParams {
            lengthscales: p.lengthscales.iter().zip(&self.range).map(|(l, r)| l * r).collect(),
            outputscale: p.outputscale * s2,
            mean_const: self.y_mean + self.y_std * p.mean_const,
            noise_var_hom: p.noise_var_hom * s2,
        }
    }
}

fn default_start(d: usize) -> KernelParams {
    let ls = (0.25 * (d as f64).sqrt()).clamp(0.1, 2.0);
    KernelParams {
        lengthscales: vec![ls; d],
        outputscale: 1.0,
        mean_const: 0.0,
        noise_var_hom: 0.05,
    }
}

fn random_start(d: usize, rng: &mut ChaCha8Rng) -> KernelParams {
    KernelParams {
        lengthscales: (0..d).map(|_| rng.random_range(0.05f64.ln()..3f64.ln()).exp()).collect(),
        outputscale: rng.random_range(0.1f64.ln()..10f64.ln()).exp(),
        mean_const: rng.random_range(-1.0..1.0),
        noise_var_hom: rng.random_range(1e-5f64.ln()..0.5f64.ln()).exp(),
    }
}

/// Rows sorted lexicographically so the search does not depend on input order.
fn canonical_order(x: &DMatrix<f64>, y: &DVector<f64>, nv: Option<&DVector<f64>>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|&a, &b| {
        for k in 0..x.ncols() {
            let o = x[(a, k)].total_cmp(&x[(b, k)]);
            if o.is_ne() {
                return o;
            }
        }
        let o = y[a].total_cmp(&y[b]);
        if o.is_ne() {
            return o;
        }
        match nv {
            Some(nv) => nv[a].total_cmp(&nv[b]),
            None => std::cmp::Ordering::Equal,
        }
    });
    idx
}

/// Maximum-likelihood fit of a single-output GP by multi-start bounded
/// quasi-Newton over log-hyperparameters in normalized units.
pub fn fit_mle(dataset: &Dataset, config: &FitConfig) -> Result<GpModel> {
    if dataset.m() != 1 {
        return Err(Error::Shape(format!(
            "fit_mle expects one output, got {}; use fit_model_list",
            dataset.m()
        )));
    }
    let n = dataset.n();
    let d = dataset.d();
    if n < 2 {
        return Err(Error::Domain("hyperparameter fitting needs n >= 2".into()));
    }
    let (y, nv) = dataset.output(0);
    let x = dataset.x();
    let scaling = Scaling::new(x, &y, config.input_bounds.as_deref())?;

    let order = canonical_order(x, &y, nv.as_ref());
    let xs = DMatrix::from_fn(n, d, |i, k| (x[(order[i], k)] - scaling.lo[k]) / scaling.range[k]);
    let ys = DVector::from_fn(n, |i, _| (y[order[i]] - scaling.y_mean) / scaling.y_std);
    let s2 = scaling.y_std * scaling.y_std;
    let nvs = nv.as_ref().map(|nv| DVector::from_fn(n, |i, _| nv[order[i]] / s2));
    let hom = nvs.is_none();

    let mut lower: Vec<f64> = vec![LS_BOUNDS.0.ln(); d];
    let mut upper: Vec<f64> = vec![LS_BOUNDS.1.ln(); d];
    lower.extend([OUTPUTSCALE_BOUNDS.0.ln(), MEAN_BOUNDS.0]);
    upper.extend([OUTPUTSCALE_BOUNDS.1.ln(), MEAN_BOUNDS.1]);
    if hom {
        lower.push(NOISE_BOUNDS.0.ln());
        upper.push(NOISE_BOUNDS.1.ln());
    }
    let noise_default = nvs.as_ref().map(|v| v.mean().max(1e-12)).unwrap_or(1e-4);

    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let p = theta_to_params(theta, d, hom, noise_default);
        match lml_and_grad(&xs, &ys, nvs.as_ref(), &p, true) {
            Ok((v, Some(g))) => (v / n as f64, g.iter().map(|g| g / n as f64).collect()),
            _ => (f64::NAN, vec![f64::NAN; theta.len()]),
        }
    };
    let qn = QuasiNewtonConfig {
        maxiter: config.maxiter,
        grad_tol: config.grad_tol,
        ftol: 1e-12,
        history: 10,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let restarts = config.num_restarts.max(1);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..restarts {
        let start = if r == 0 {
            match &config.warm_start {
                Some(w) if w.validate(d).is_ok() => scaling.normalize(w),
                _ => default_start(d),
            }
        } else {
            random_start(d, &mut rng)
        };
        let theta0 = params_to_theta(&start, hom);
        let res = bounded_quasi_newton(objective, theta0.as_slice(), &lower, &upper, &qn);
        if !res.value.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(v, _)| res.value > *v) {
            best = Some((res.value, res.x));
        }
    }
    let Some((_, theta)) = best else {
        return Err(Error::FitFailed {
            restarts,
            best: None,
        });
    };
    let mut params = scaling.denormalize(&theta_to_params(&theta, d, hom, noise_default));
    if !hom {
        params.noise_var_hom = noise_default * s2;
    }
    match GpModel::from_dataset(dataset, params) {
        Ok(m) => Ok(m),
        Err(_) => Err(Error::FitFailed {
            restarts,
            best: None,
        }),
    }
}

/// Fits one independent GP per output column. `warm` supplies per-output
/// warm starts from a previous fit.
pub fn fit_model_list(dataset: &Dataset, config: &FitConfig, warm: Option<&ModelList>) -> Result<ModelList> {
    let mut models = Vec::with_capacity(dataset.m());
    for j in 0..dataset.m() {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(j as u64);
        if let Some(w) = warm.and_then(|w| w.models().get(j)) {
            cfg.warm_start = Some(w.params().clone());
        }
        models.push(fit_mle(&dataset.output_dataset(j), &cfg)?);
    }
    ModelList::new(models)
}
