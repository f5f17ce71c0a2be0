use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::kernel::Matern52;
use crate::gp::{GpModel, KernelParams};
use crate::linalg::{self, cholesky_jittered, JITTER_MAX};

/// Log-hyperparameter layout: `[log ℓ_1..log ℓ_d, log s, c, log σ²]`, the
/// last entry present only for homoskedastic models.
pub fn params_to_theta(params: &KernelParams, homoskedastic: bool) -> DVector<f64> {
    let mut t: Vec<f64> = params.lengthscales.iter().map(|l| l.ln()).collect();
    t.push(params.outputscale.ln());
    t.push(params.mean_const);
    if homoskedastic {
        t.push(params.noise_var_hom.ln());
    }
    DVector::from_vec(t)
}

pub fn theta_to_params(theta: &[f64], d: usize, homoskedastic: bool, noise_default: f64) -> KernelParams {
    KernelParams {
        lengthscales: theta[..d].iter().map(|v| v.exp()).collect(),
        outputscale: theta[d].exp(),
        mean_const: theta[d + 1],
        noise_var_hom: if homoskedastic { theta[d + 2].exp() } else { noise_default },
    }
}

/// Log evidence and (optionally) its gradient in the `theta` layout.
pub(crate) fn lml_and_grad(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    fixed_noise: Option<&DVector<f64>>,
    params: &KernelParams,
    want_grad: bool,
) -> Result<(f64, Option<DVector<f64>>)> {
    let n = x.nrows();
    let d = x.ncols();
    let kern = Matern52::new(params);
    let kf = kern.matrix(x, x);
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += match fixed_noise {
            Some(nv) => nv[i],
            None => params.noise_var_hom,
        };
    }
    let mean_diag = k.diagonal().sum() / n.max(1) as f64;
    let (l, _) = cholesky_jittered(&k).ok_or(Error::SingularKernel {
        max_jitter: JITTER_MAX * mean_diag,
    })?;
    let r = y.add_scalar(-params.mean_const);
    let w = linalg::solve_lower_vec(&l, &r);
    let alpha = linalg::solve_lower_transpose_vec(&l, &w);
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let value = -0.5 * w.norm_squared() - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !value.is_finite() {
        return Err(Error::SingularKernel {
            max_jitter: JITTER_MAX * mean_diag,
        });
    }
    if !want_grad {
        return Ok((value, None));
    }

    let linv = linalg::solve_lower(&l, &DMatrix::identity(n, n));
    let mut wmat = &alpha * alpha.transpose();
    wmat.gemm_tr(-1.0, &linv, &linv, 1.0);

    let hom = fixed_noise.is_none();
    let mut g = DVector::zeros(d + 2 + usize::from(hom));
    let inv_ls2 = &kern.inv_ls2;
    for j in 0..n {
        for i in 0..j {
            let wij = wmat[(i, j)];
            let mut r2 = 0.0;
            for (kk, w) in inv_ls2.iter().enumerate() {
                let diff = x[(i, kk)] - x[(j, kk)];
                r2 += diff * diff * w;
            }
            let c = kern.neg_dk_over_r(r2.sqrt()) * wij;
            for (kk, w) in inv_ls2.iter().enumerate() {
                let diff = x[(i, kk)] - x[(j, kk)];
                // symmetric pair counted twice, halved by the leading ½
                g[kk] += c * diff * diff * w;
            }
        }
    }
    g[d] = 0.5 * wmat.component_mul(&kf).sum();
    g[d + 1] = alpha.sum();
    if hom {
        g[d + 2] = 0.5 * params.noise_var_hom * wmat.trace();
    }
    Ok((value, Some(g)))
}

/// Gaussian log evidence of the model's training data and its gradient with
/// respect to the log-hyperparameters (see [`params_to_theta`]).
pub fn log_marginal_likelihood(model: &GpModel) -> Result<(f64, DVector<f64>)> {
    if model.n() == 0 {
        return Err(Error::Domain("log marginal likelihood needs n >= 1".into()));
    }
    let nv = model.has_fixed_noise().then(|| model.train_noise().clone());
    let (v, g) = lml_and_grad(model.train_x(), model.train_y(), nv.as_ref(), model.params(), true)?;
    Ok((v, g.expect("gradient requested")))
}
