//! Negative integrated posterior variance after a (fantasy) observation at X.

use nalgebra::{DMatrix, DVector};

use crate::acquisition::{AcquisitionContext, AcquisitionValue};
use crate::error::Result;
use crate::gp::tape::Block;
use crate::gp::ModelList;
use crate::linalg::{self, root_decomposition};

#[derive(Debug)]
pub(crate) struct NipvCache {
    blocks: Vec<(Block, DVector<f64>)>,
}

impl NipvCache {
    pub fn new(model: &ModelList, mc_points: &DMatrix<f64>) -> Result<Self> {
        let blocks = model
            .models()
            .iter()
            .map(|gp| {
                gp.check_points(mc_points)?;
                let b = gp.block(mc_points);
                let v = gp.block_var(&b);
                Ok((b, v))
            })
            .collect::<Result<_>>()?;
        Ok(NipvCache { blocks })
    }
}

pub(crate) fn qnipv(
    ctx: &AcquisitionContext,
    cache: &NipvCache,
    x: &DMatrix<f64>,
    want_grad: bool,
) -> Result<AcquisitionValue> {
    let a_pts = ctx.with_pending_rows(x);
    let na = a_pts.nrows();
    let m = ctx.m();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    for (gp, (bm, var_m)) in ctx.model.models().iter().zip(&cache.blocks) {
        let r = bm.len();
        let scale = 1.0 / (r * m) as f64;
        let ba = gp.block(&a_pts);
        let mut saa = gp.block_cov_self(&ba);
        let noise = gp.noise_at_new();
        for i in 0..na {
            saa[(i, i)] += noise;
        }
        let l = root_decomposition(&saa)?;
        let cam = gp.block_cov(&ba, bm);
        let t = linalg::solve_lower(&l, &cam);
        let reduction: f64 = t.norm_squared();
        value -= scale * (var_m.sum() - reduction);
        if want_grad {
            let tbar = &t * (2.0 * scale);
            let ltb = linalg::solve_lower_transpose(&l, &tbar);
            let lbar = -(&ltb * t.transpose()).lower_triangle();
            let sbar = linalg::cholesky_backward(&l, &lbar);
            let mut ga = gp.block_grad(&ba);
            gp.block_cov_self_backward(&ba, &sbar, &mut ga);
            gp.block_cov_backward(&ba, bm, &ltb, &mut ga, None);
            let za = gp.block_finish(&ba, ga);
            grad += za.rows(0, x.nrows());
        }
    }
    Ok(AcquisitionValue { value, grad })
}

/// Mean posterior variance over `points`, averaged across outputs.
pub fn integrated_posterior_variance(model: &ModelList, points: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.0;
    for gp in model.models() {
        total += gp.posterior_variance(points)?.mean();
    }
    Ok(total / model.num_outputs() as f64)
}
