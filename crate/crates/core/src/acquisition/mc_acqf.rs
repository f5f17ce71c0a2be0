//! Monte-Carlo utilities over joint posterior samples: qEI, qNEI, qUCB.

use nalgebra::DMatrix;

use crate::acquisition::mc::{self, Prefix};
use crate::acquisition::{AcquisitionContext, AcquisitionValue};
use crate::error::Result;
use crate::sampling::BaseSampleSet;

/// Index of the largest entry, lowest index on ties.
#[inline]
pub(crate) fn argmax_row(g: &DMatrix<f64>, i: usize) -> usize {
    let mut best = 0;
    for a in 1..g.ncols() {
        if g[(i, a)] > g[(i, best)] {
            best = a;
        }
    }
    best
}

/// Samples at `[X; X_pending]`, applies the objective and the utility, and
/// back-propagates to `X`.
pub(crate) fn mc_eval<U>(
    ctx: &AcquisitionContext,
    prefix: Option<&Prefix>,
    base: &BaseSampleSet,
    x: &DMatrix<f64>,
    want_grad: bool,
    utility: U,
) -> Result<AcquisitionValue>
where
    U: Fn(&DMatrix<f64>) -> (f64, DMatrix<f64>),
{
    let z = ctx.with_pending_rows(x);
    let outs = mc::forward(&ctx.model, prefix, &z, base)?;
    let xi: Vec<DMatrix<f64>> = outs.iter().map(|o| o.xi.clone()).collect();
    let (g, dg) = ctx.objective.apply_with_grad(&xi)?;
    let (value, gbar) = utility(&g);
    if !want_grad {
        return Ok(AcquisitionValue {
            value,
            grad: DMatrix::zeros(x.nrows(), x.ncols()),
        });
    }
    let xibar: Vec<DMatrix<f64>> = dg.iter().map(|d| d.component_mul(&gbar)).collect();
    let zbar = mc::backward(&ctx.model, prefix, &outs, &xibar);
    Ok(AcquisitionValue {
        value,
        grad: zbar.rows(0, x.nrows()).into_owned(),
    })
}

pub(crate) fn improvement_utility(g: &DMatrix<f64>, threshold: impl Fn(usize) -> f64) -> (f64, DMatrix<f64>) {
    let n = g.nrows();
    let inv_n = 1.0 / n as f64;
    let mut gbar = DMatrix::zeros(n, g.ncols());
    let mut total = 0.0;
    for i in 0..n {
        let a = argmax_row(g, i);
        let imp = g[(i, a)] - threshold(i);
        if imp > 0.0 {
            total += imp;
            gbar[(i, a)] = inv_n;
        }
    }
    (total * inv_n, gbar)
}

pub(crate) fn qei(ctx: &AcquisitionContext, x: &DMatrix<f64>, want_grad: bool) -> Result<AcquisitionValue> {
    let best_f = ctx.best_f.expect("checked at construction");
    mc_eval(ctx, None, &ctx.base_samples, x, want_grad, |g| improvement_utility(g, |_| best_f))
}

pub(crate) fn qnei(
    ctx: &AcquisitionContext,
    prefix: &Prefix,
    baseline_max: &[f64],
    x: &DMatrix<f64>,
    want_grad: bool,
) -> Result<AcquisitionValue> {
    mc_eval(ctx, Some(prefix), &ctx.base_samples, x, want_grad, |g| improvement_utility(g, |i| baseline_max[i]))
}

pub(crate) fn qucb(ctx: &AcquisitionContext, x: &DMatrix<f64>, want_grad: bool) -> Result<AcquisitionValue> {
    let beta_prime = (ctx.beta * std::f64::consts::PI / 2.0).sqrt();
    mc_eval(ctx, None, &ctx.base_samples, x, want_grad, |g| {
        let (n, p) = g.shape();
        let inv_n = 1.0 / n as f64;
        // offset by the first sample so a degenerate posterior reproduces μ exactly
        let mean: Vec<f64> = (0..p)
            .map(|a| g[(0, a)] + g.column(a).iter().map(|v| v - g[(0, a)]).sum::<f64>() * inv_n)
            .collect();
        let mut gbar = DMatrix::zeros(n, p);
        let mut col_coef = vec![0.0; p];
        let mut total = 0.0;
        let mut first = 0.0;
        for i in 0..n {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for a in 0..p {
                let v = mean[a] + beta_prime * (g[(i, a)] - mean[a]).abs();
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            if i == 0 {
                first = best_v;
            }
            total += best_v - first;
            let s = (g[(i, best)] - mean[best]).signum();
            let s = if g[(i, best)] == mean[best] { 0.0 } else { s };
            // through the MC mean of column `best`
            col_coef[best] += inv_n * inv_n * (1.0 - beta_prime * s);
            gbar[(i, best)] += inv_n * beta_prime * s;
        }
        for (a, c) in col_coef.iter().enumerate() {
            gbar.column_mut(a).add_scalar_mut(*c);
        }
        (first + total * inv_n, gbar)
    })
}
