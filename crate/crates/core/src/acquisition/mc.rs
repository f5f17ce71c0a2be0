//! Joint posterior sampling `ξ = μ + L ε` with reverse-mode gradients.
//!
//! An optional fixed prefix of points `B` (the qNEI baseline) is factored
//! once. For new points `Z` the joint root is `[[L_B, 0], [C, D]]` with
//! `C = Σ_ZB L_B⁻ᵀ` and `D = chol(Σ_ZZ − C Cᵀ)`, which is exactly the
//! Cholesky factor of the joint covariance over `[B; Z]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp::tape::Block;
use crate::gp::ModelList;
use crate::linalg::{self, root_decomposition};
use crate::sampling::BaseSampleSet;

#[derive(Debug, Clone)]
pub(crate) struct PrefixOut {
    pub block: Block,
    pub l: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Prefix {
    pub outs: Vec<PrefixOut>,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct JointOut {
    block: Block,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    e: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

fn base_columns(base: &BaseSampleSet, m: usize, j: usize, first_point: usize, count: usize) -> Result<DMatrix<f64>> {
    let required = (first_point + count) * m;
    if required > base.width() {
        return Err(Error::BaseSampleShape {
            required,
            available: base.width(),
        });
    }
    let s = base.samples();
    Ok(DMatrix::from_fn(s.nrows(), count, |i, a| s[(i, (first_point + a) * m + j)]))
}

fn add_rowwise(xi: &mut DMatrix<f64>, mu: &DVector<f64>) {
    for mut row in xi.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mu.iter()) {
            *v += m;
        }
    }
}

pub(crate) fn build_prefix(model: &ModelList, b: &DMatrix<f64>, base: &BaseSampleSet) -> Result<Prefix> {
    let m = model.num_outputs();
    let nb = b.nrows();
    let mut outs = Vec::with_capacity(m);
    for (j, gp) in model.models().iter().enumerate() {
        gp.check_points(b)?;
        let block = gp.block(b);
        let mu = gp.block_mean(&block);
        let cov = gp.block_cov_self(&block);
        let l = root_decomposition(&cov)?;
        let e = base_columns(base, m, j, 0, nb)?;
        let mut xi = &e * l.transpose();
        add_rowwise(&mut xi, &mu);
        outs.push(PrefixOut { block, l, e, xi });
    }
    Ok(Prefix { outs, len: nb })
}

/// Samples at `z` for every output, jointly with the prefix if given.
pub(crate) fn forward(
    model: &ModelList,
    prefix: Option<&Prefix>,
    z: &DMatrix<f64>,
    base: &BaseSampleSet,
) -> Result<Vec<JointOut>> {
    let m = model.num_outputs();
    let p = z.nrows();
    let nb = prefix.map_or(0, |pf| pf.len);
    let mut outs = Vec::with_capacity(m);
    for (j, gp) in model.models().iter().enumerate() {
        gp.check_points(z)?;
        let block = gp.block(z);
        let mu = gp.block_mean(&block);
        let mut s = gp.block_cov_self(&block);
        let scale = s.diagonal().mean();
        let e = base_columns(base, m, j, nb, p)?;
        let c = match prefix {
            Some(pf) => {
                let po = &pf.outs[j];
                let szb = gp.block_cov(&block, &po.block);
                let c = linalg::solve_lower(&po.l, &szb.transpose()).transpose();
                s.gemm_tr(-1.0, &c.transpose(), &c.transpose(), 1.0);
                for a in 0..p {
                    for b in a + 1..p {
                        let v = 0.5 * (s[(a, b)] + s[(b, a)]);
                        s[(a, b)] = v;
                        s[(b, a)] = v;
                    }
                }
                c
            }
            None => DMatrix::zeros(p, 0),
        };
        let d = linalg::root_decomposition_scaled(&s, scale)?;
        let mut xi = &e * d.transpose();
        if let Some(pf) = prefix {
            xi.gemm(1.0, &pf.outs[j].e, &c.transpose(), 1.0);
        }
        add_rowwise(&mut xi, &mu);
        outs.push(JointOut { block, c, d, e, xi });
    }
    Ok(outs)
}

/// Pulls `∂/∂ξ_Z` (one N×p matrix per output) back to `∂/∂Z`.
pub(crate) fn backward(
    model: &ModelList,
    prefix: Option<&Prefix>,
    outs: &[JointOut],
    xibar: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let mut zbar: Option<DMatrix<f64>> = None;
    for (j, (gp, o)) in model.models().iter().zip(outs).enumerate() {
        let xb = &xibar[j];
        let mut g = gp.block_grad(&o.block);
        let mubar = DVector::from_iterator(xb.ncols(), xb.column_iter().map(|c| c.sum()));
        gp.block_mean_backward(&mubar, &mut g);
        let dbar = (xb.transpose() * &o.e).lower_triangle();
        let sbar = linalg::cholesky_backward(&o.d, &dbar);
        gp.block_cov_self_backward(&o.block, &sbar, &mut g);
        if let Some(pf) = prefix {
            let po = &pf.outs[j];
            let mut cbar = xb.transpose() * &po.e;
            cbar.gemm(-2.0, &sbar, &o.c, 1.0);
            // Σ̄_ZB = C̄ L_B⁻¹
            let szb_bar = linalg::solve_lower_transpose(&po.l, &cbar.transpose()).transpose();
            gp.block_cov_backward(&o.block, &po.block, &szb_bar, &mut g, None);
        }
        let zb = gp.block_finish(&o.block, g);
        match &mut zbar {
            Some(acc) => *acc += zb,
            None => zbar = Some(zb),
        }
    }
    zbar.expect("at least one output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpModel, KernelParams};
    use crate::sampling::{draw_base_samples, SamplerMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> ModelList {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(8, 2, |_, _| rng.random::<f64>());
        let mk = |shift: f64, rng: &mut ChaCha8Rng| {
            let y = DVector::from_fn(8, |i, _| (3.0 * x[(i, 0)] + shift).sin() + x[(i, 1)]);
            let p = KernelParams {
                lengthscales: vec![rng.random_range(0.3..0.6), rng.random_range(0.3..0.6)],
                outputscale: 1.0,
                mean_const: 0.0,
                noise_var_hom: 1e-2,
            };
            GpModel::new(x.clone(), y, None, p).unwrap()
        };
        let a = mk(0.0, &mut rng);
        let b = mk(1.0, &mut rng);
        ModelList::new(vec![a, b]).unwrap()
    }

    #[test]
    fn prefix_matches_direct_joint() {
        let ml = model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
        let z = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>());
        let base = draw_base_samples(SamplerMode::Iid, 0, 16, 5, 2).unwrap();
        let pf = build_prefix(&ml, &b, &base).unwrap();
        let outs = forward(&ml, Some(&pf), &z, &base).unwrap();
        let mut all = DMatrix::zeros(5, 2);
        all.rows_mut(0, 3).copy_from(&b);
        all.rows_mut(3, 2).copy_from(&z);
        let direct = forward(&ml, None, &all, &base).unwrap();
        for j in 0..2 {
            let want = direct[j].xi.columns(3, 2);
            assert!((&outs[j].xi - want).norm() < 1e-10);
            assert!((&pf.outs[j].xi - direct[j].xi.columns(0, 3)).norm() < 1e-10);
        }
    }

    #[test]
    fn gradient_through_prefix() {
        let ml = model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
        let z = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>());
        let base = draw_base_samples(SamplerMode::Iid, 1, 8, 5, 2).unwrap();
        let w: Vec<DMatrix<f64>> = (0..2).map(|_| DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
        for use_prefix in [false, true] {
            let pf = build_prefix(&ml, &b, &base).unwrap();
            let pf = use_prefix.then_some(&pf);
            let f = |z: &DMatrix<f64>| -> f64 {
                forward(&ml, pf, z, &base)
                    .unwrap()
                    .iter()
                    .zip(&w)
                    .map(|(o, w)| o.xi.component_mul(w).sum())
                    .sum()
            };
            let outs = forward(&ml, pf, &z, &base).unwrap();
            let g = backward(&ml, pf, &outs, &w);
            let h = 1e-6;
            for a in 0..2 {
                for k in 0..2 {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[(a, k)] += h;
                    zm[(a, k)] -= h;
                    let fd = (f(&zp) - f(&zm)) / (2.0 * h);
                    assert!((fd - g[(a, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g[(a, k)]);
                }
            }
        }
    }
}
