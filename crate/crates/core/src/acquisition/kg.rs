//! Posterior mean / simple regret and the one-shot knowledge gradient.

use nalgebra::{DMatrix, DVector};

use crate::acquisition::mc_acqf::{argmax_row, mc_eval};
use crate::acquisition::{AcquisitionContext, AcquisitionValue};
use crate::error::{Error, Result};
use crate::linalg::{self, root_decomposition};

pub(crate) fn posterior_mean(ctx: &AcquisitionContext, x: &DMatrix<f64>, want_grad: bool) -> Result<AcquisitionValue> {
    let m = ctx.m();
    if let (1, None, Some(w)) = (x.nrows(), &ctx.x_pending, ctx.objective.affine_weights(m)) {
        let mut value = 0.0;
        let mut grad = DMatrix::zeros(1, x.ncols());
        for (gp, wj) in ctx.model.models().iter().zip(&w) {
            let b = gp.block(x);
            value += wj * gp.block_mean(&b)[0];
            if want_grad && *wj != 0.0 {
                let mut g = gp.block_grad(&b);
                gp.block_mean_backward(&DVector::from_element(1, *wj), &mut g);
                grad += gp.block_finish(&b, g);
            }
        }
        return Ok(AcquisitionValue { value, grad });
    }
    let needed = ctx.with_pending_rows(x).nrows() * m;
    let samples = match ctx.inner_samples() {
        inner if inner.width() >= needed => inner,
        _ => &ctx.base_samples,
    };
    mc_eval(ctx, None, samples, x, want_grad, |g| {
        let n = g.nrows();
        let inv_n = 1.0 / n as f64;
        let mut gbar = DMatrix::zeros(n, g.ncols());
        let mut total = 0.0;
        for i in 0..n {
            let a = argmax_row(g, i);
            total += g[(i, a)];
            gbar[(i, a)] = inv_n;
        }
        (total * inv_n, gbar)
    })
}

struct OutputState {
    mean: DVector<f64>,
    var: DVector<f64>,
}

/// One-shot KG over `X_aug = [X; x′]` with `x′` holding one row per fantasy.
pub(crate) fn one_shot_kg(ctx: &AcquisitionContext, x_aug: &DMatrix<f64>, want_grad: bool) -> Result<AcquisitionValue> {
    let nf = ctx.num_fantasies;
    let rows = x_aug.nrows();
    if rows <= nf {
        return Err(Error::Acquisition(format!(
            "X_aug has {rows} rows; needs q >= 1 candidates plus {nf} fantasy points"
        )));
    }
    let q = rows - nf;
    let d = x_aug.ncols();
    let m = ctx.m();
    let mu_star = ctx.mu_star.expect("checked at construction");
    let x = x_aug.rows(0, q).into_owned();
    let xf = x_aug.rows(q, nf).into_owned();
    let a_pts = ctx.with_pending_rows(&x);
    let na = a_pts.nrows();
    let outer = ctx.base_samples.samples();
    if outer.nrows() != nf {
        return Err(Error::Acquisition("outer base samples must have one row per fantasy".into()));
    }
    if outer.ncols() < na * m {
        return Err(Error::BaseSampleShape {
            required: na * m,
            available: outer.ncols(),
        });
    }
    let affine = ctx.objective.affine_weights(m);

    // forward
    let mut fwd = Vec::with_capacity(m);
    let mut states = Vec::with_capacity(m);
    for (j, gp) in ctx.model.models().iter().enumerate() {
        let ba = gp.block(&a_pts);
        let bf = gp.block(&xf);
        let mu_f = gp.block_mean(&bf);
        let mut saa = gp.block_cov_self(&ba);
        let noise = gp.noise_at_new();
        for i in 0..na {
            saa[(i, i)] += noise;
        }
        let l = root_decomposition(&saa)?;
        let c = gp.block_cov(&bf, &ba);
        let e = DMatrix::from_fn(na, nf, |a, i| outer[(i, a * m + j)]);
        let w = linalg::solve_lower_transpose(&l, &e);
        let mut mean = mu_f;
        for i in 0..nf {
            mean[i] += c.row(i).transpose().dot(&w.column(i));
        }
        let (t, var) = if affine.is_none() {
            let t = linalg::solve_lower(&l, &c.transpose());
            let var_f = gp.block_var(&bf);
            let var = DVector::from_fn(nf, |i, _| (var_f[i] - t.column(i).norm_squared()).max(0.0));
            (Some(t), var)
        } else {
            (None, DVector::zeros(nf))
        };
        states.push(OutputState { mean, var });
        fwd.push((ba, bf, l, c, w, t));
    }

    let inv_nf = 1.0 / nf as f64;
    let mut mbar = vec![DVector::zeros(nf); m];
    let mut vbar = vec![DVector::zeros(nf); m];
    let mut total = 0.0;
    match &affine {
        Some(wts) => {
            for i in 0..nf {
                total += (0..m).map(|j| wts[j] * states[j].mean[i]).sum::<f64>();
            }
            for j in 0..m {
                mbar[j].fill(wts[j] * inv_nf);
            }
        }
        None => {
            let inner = ctx.inner_samples();
            let ei = inner.samples();
            if ei.ncols() < m {
                return Err(Error::BaseSampleShape {
                    required: m,
                    available: ei.ncols(),
                });
            }
            let ni = ei.nrows();
            let inv_ni = 1.0 / ni as f64;
            let mut y = vec![0.0; m];
            let mut gy = vec![0.0; m];
            for i in 0..nf {
                let sd: Vec<f64> = (0..m).map(|j| states[j].var[i].sqrt()).collect();
                for k in 0..ni {
                    for j in 0..m {
                        y[j] = states[j].mean[i] + sd[j] * ei[(k, j)];
                    }
                    total += ctx.objective.eval_point(&y, &mut gy) * inv_ni;
                    for j in 0..m {
                        mbar[j][i] += gy[j] * inv_ni * inv_nf;
                        if sd[j] > 0.0 {
                            vbar[j][i] += gy[j] * ei[(k, j)] / (2.0 * sd[j]) * inv_ni * inv_nf;
                        }
                    }
                }
            }
        }
    }
    let value = total * inv_nf - mu_star;
    let mut grad = DMatrix::zeros(rows, d);
    if !want_grad {
        return Ok(AcquisitionValue { value, grad });
    }

    // backward
    for (j, gp) in ctx.model.models().iter().enumerate() {
        let (ba, bf, l, c, w, t) = &fwd[j];
        let mb = &mbar[j];
        let mut ga = gp.block_grad(ba);
        let mut gf = gp.block_grad(bf);
        gp.block_mean_backward(mb, &mut gf);
        // m_i = μ_F(i) + c_iᵀ w_i
        let mut cbar = DMatrix::from_fn(nf, na, |i, a| mb[i] * w[(a, i)]);
        let wbar = DMatrix::from_fn(na, nf, |a, i| mb[i] * c[(i, a)]);
        let u = linalg::solve_lower(l, &wbar);
        let mut lbar = -(w * u.transpose());
        if let Some(t) = t {
            let vb = &vbar[j];
            gp.block_var_backward(bf, vb, &mut gf);
            let tbar = DMatrix::from_fn(na, nf, |a, i| -2.0 * vb[i] * t[(a, i)]);
            let ltb = linalg::solve_lower_transpose(l, &tbar);
            cbar += ltb.transpose();
            lbar -= &ltb * t.transpose();
        }
        let lbar = lbar.lower_triangle();
        let sbar = linalg::cholesky_backward(l, &lbar);
        gp.block_cov_self_backward(ba, &sbar, &mut ga);
        gp.block_cov_backward(bf, ba, &cbar, &mut gf, Some(&mut ga));
        let za = gp.block_finish(ba, ga);
        let zf = gp.block_finish(bf, gf);
        let mut top = grad.rows_mut(0, q);
        top += za.rows(0, q);
        let mut bottom = grad.rows_mut(q, nf);
        bottom += zf;
    }
    Ok(AcquisitionValue { value, grad })
}
