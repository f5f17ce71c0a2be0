#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saabo::acquisition::{Acquisition, AcquisitionContext, AcquisitionFunction, AcquisitionKind};
use saabo::gp::{fit_mle, Dataset, FitConfig, GpModel, KernelParams, ModelList};
use saabo::objective::ObjectiveSpec;
use saabo::sampling::{draw_base_samples, SamplerMode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_x(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random::<f64>())
}

/// Smooth deterministic test surface on the unit cube, varied by `j`.
pub fn surface(x: &DMatrix<f64>, j: usize) -> DVector<f64> {
    let shift = 0.37 * j as f64;
    DVector::from_fn(x.nrows(), |i, _| {
        let r = x.row(i);
        r.iter()
            .enumerate()
            .map(|(k, v)| ((3.0 + k as f64) * v + shift + k as f64).sin() / (1.0 + k as f64).sqrt())
            .sum::<f64>()
    })
}

/// Model with randomly drawn hyperparameters on random training data.
pub fn random_model(d: usize, n: usize, j: usize, seed: u64) -> GpModel {
    let mut r = rng(seed);
    let x = uniform_x(&mut r, n, d);
    random_model_on(&x, j, &mut r)
}

pub fn random_model_on(x: &DMatrix<f64>, j: usize, r: &mut ChaCha8Rng) -> GpModel {
    let d = x.ncols();
    let y = surface(x, j);
    let params = KernelParams {
        lengthscales: (0..d).map(|_| r.random_range(0.2..0.8) * (d as f64).sqrt()).collect(),
        outputscale: r.random_range(0.5..2.0),
        mean_const: r.random_range(-0.3..0.3),
        noise_var_hom: r.random_range(1e-3..1e-2),
    };
    GpModel::new(x.clone(), y, None, params).unwrap()
}

pub fn random_model_list(d: usize, n: usize, m: usize, seed: u64) -> ModelList {
    let mut r = rng(seed);
    let x = uniform_x(&mut r, n, d);
    ModelList::new((0..m).map(|j| random_model_on(&x, j, &mut r)).collect()).unwrap()
}

/// Maximum-likelihood model on noisy samples of `surface`.
pub fn fitted_model(d: usize, n: usize, seed: u64) -> GpModel {
    let mut r = rng(seed);
    let x = uniform_x(&mut r, n, d);
    let y = surface(&x, 0).map(|v| v + 0.05 * (r.random::<f64>() - 0.5));
    let data = Dataset::single(x, y, None).unwrap();
    let cfg = FitConfig {
        num_restarts: 2,
        seed,
        input_bounds: Some(vec![(0.0, 1.0); d]),
        ..FitConfig::default()
    };
    fit_mle(&data, &cfg).unwrap()
}

pub struct AcqSetup {
    pub q: usize,
    pub pending: usize,
    pub n_samples: usize,
    pub objective: ObjectiveSpec,
    pub seed: u64,
}

/// Builds `kind` on `model` with everything the kind needs.
pub fn build(kind: AcquisitionKind, model: &ModelList, s: &AcqSetup) -> Acquisition {
    let d = model.d();
    let m = model.num_outputs();
    let mut r = rng(s.seed ^ 0xabc);
    let pending = (s.pending > 0).then(|| uniform_x(&mut r, s.pending, d));
    let nb = model.train_x().nrows();
    let (rows, n) = match kind {
        AcquisitionKind::Qnei => (nb + s.q + s.pending, s.n_samples),
        AcquisitionKind::Okg => (s.q + s.pending, s.n_samples),
        _ => (s.q + s.pending, s.n_samples),
    };
    let base = draw_base_samples(SamplerMode::Rqmc, s.seed, n, rows, m).unwrap();
    let inner = draw_base_samples(SamplerMode::Rqmc, s.seed + 1, 32, 1, m).unwrap();
    let best_f = model
        .models()
        .iter()
        .map(|gp| gp.train_y().max())
        .fold(f64::NEG_INFINITY, f64::max);
    let ctx = AcquisitionContext::new(model.clone(), s.objective.clone(), base)
        .with_pending(pending)
        .with_best_f(best_f)
        .with_beta(0.7)
        .with_baseline(model.train_x().clone())
        .with_num_fantasies(s.n_samples)
        .with_inner_samples(inner)
        .with_mc_points(uniform_x(&mut r, 40, d))
        .with_mu_star(0.1);
    Acquisition::new(kind, ctx).unwrap()
}

pub fn central_fd<F: Fn(&DMatrix<f64>) -> f64>(f: &F, x: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for a in 0..x.nrows() {
        for k in 0..x.ncols() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[(a, k)] += h;
            xm[(a, k)] -= h;
            g[(a, k)] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
    }
    g
}

pub const FD_FLOOR: f64 = 1e-6;

/// `max|g − fd| / max(‖fd‖∞, 1e-6)` with `h = 1e-5`, or `None` when the
/// point is not smooth at that scale (steps `h` and `h/2` disagree).
pub fn gradient_error<A: AcquisitionFunction>(acqf: &A, x: &DMatrix<f64>) -> Option<f64> {
    let f = |z: &DMatrix<f64>| acqf.value(z).unwrap();
    let h = 1e-5;
    let fd = central_fd(&f, x, h);
    let fd2 = central_fd(&f, x, h / 2.0);
    let scale = fd.amax().max(FD_FLOOR);
    if (&fd - &fd2).amax() > 1e-5 * scale {
        return None;
    }
    let g = acqf.evaluate(x).unwrap().grad;
    Some((&g - &fd).amax() / scale)
}
