//! Multi-start drivers: joint, sequential greedy and one-shot KG.

use nalgebra::DMatrix;

use crate::acquisition::{Acquisition, AcquisitionContext, AcquisitionFunction, AcquisitionKind};
use crate::error::{Error, Result};
use crate::gp::ModelList;
use crate::objective::ObjectiveSpec;
use crate::optimize::initial::{gen_initial_conditions, select_starts, sobol_tuples};
use crate::optimize::{bounded_quasi_newton, CandidateResult, OptimizeConfig, OptimizeMode};
use crate::linalg;
use crate::sampling::BaseSampleSet;

struct Restart {
    x: DMatrix<f64>,
    converged: bool,
}

fn run_restarts<A: AcquisitionFunction>(acqf: &A, starts: Vec<DMatrix<f64>>, config: &OptimizeConfig) -> Vec<Restart> {
    let d = config.bounds.len();
    let qn = config.quasi_newton();
    starts
        .into_iter()
        .map(|x0| {
            let rows = x0.nrows();
            let mut lower = Vec::with_capacity(rows * d);
            let mut upper = Vec::with_capacity(rows * d);
            for _ in 0..rows {
                for (lo, hi) in &config.bounds {
                    lower.push(*lo);
                    upper.push(*hi);
                }
            }
            let flat: Vec<f64> = (0..rows).flat_map(|a| (0..d).map(move |k| (a, k))).map(|(a, k)| x0[(a, k)]).collect();
            let f = |v: &[f64]| {
                let x = DMatrix::from_row_slice(rows, d, v);
                match acqf.evaluate(&x) {
                    Ok(av) => {
                        let g: Vec<f64> = (0..rows).flat_map(|a| (0..d).map(move |k| (a, k))).map(|(a, k)| av.grad[(a, k)]).collect();
                        (av.value, g)
                    }
                    Err(_) => (f64::NAN, vec![0.0; v.len()]),
                }
            };
            let res = bounded_quasi_newton(f, &flat, &lower, &upper, &qn);
            let mut x = DMatrix::from_row_slice(rows, d, &res.x);
            for a in 0..rows {
                for (k, (lo, hi)) in config.bounds.iter().enumerate() {
                    x[(a, k)] = x[(a, k)].clamp(*lo, *hi);
                }
            }
            Restart {
                x,
                converged: res.converged,
            }
        })
        .collect()
}

/// Index of the largest finite value, lowest index on ties.
fn best_index(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

fn finish<A: AcquisitionFunction>(acqf: &A, restarts: Vec<Restart>, q: usize) -> Result<CandidateResult> {
    let values: Vec<f64> = restarts
        .iter()
        .map(|r| acqf.value(&r.x).unwrap_or(f64::NAN))
        .collect();
    let best = best_index(&values).ok_or_else(|| {
        Error::Optimization(format!("all {} restarts ended at non-finite acquisition values", restarts.len()))
    })?;
    let x_full = restarts[best].x.clone();
    Ok(CandidateResult {
        x_star: x_full.rows(0, q).into_owned(),
        value: values[best],
        restart_values: values,
        converged: restarts.iter().map(|r| r.converged).collect(),
        x_full: (x_full.nrows() > q).then_some(x_full),
    })
}

/// Maximizes `acqf` over `q × d` candidate sets.
pub fn optimize_acqf<A: AcquisitionFunction>(acqf: &A, config: &OptimizeConfig, seed: u64) -> Result<CandidateResult> {
    config.validate(acqf.dim())?;
    match config.mode {
        OptimizeMode::Joint => {
            let starts = gen_initial_conditions(acqf, config, seed)?;
            let restarts = run_restarts(acqf, starts, config);
            finish(acqf, restarts, config.q)
        }
        OptimizeMode::SequentialGreedy => sequential_greedy(acqf, config, seed),
    }
}

fn sequential_greedy<A: AcquisitionFunction>(acqf: &A, config: &OptimizeConfig, seed: u64) -> Result<CandidateResult> {
    if acqf.rows_for(1) != 1 {
        return Err(Error::Config("sequential greedy needs an acquisition without auxiliary rows".into()));
    }
    let d = acqf.dim();
    let step_config = OptimizeConfig {
        q: 1,
        raw_samples: (config.raw_samples / config.q).max(config.num_restarts),
        mode: OptimizeMode::Joint,
        ..config.clone()
    };
    let mut chosen = DMatrix::<f64>::zeros(0, d);
    let mut last = None;
    for k in 0..config.q {
        let pending = (k > 0).then_some(&chosen);
        let step = acqf.with_pending(pending)?;
        let starts = gen_initial_conditions(&step, &step_config, seed + k as u64)?;
        let restarts = run_restarts(&step, starts, &step_config);
        // rank by the joint utility of the set built so far, in construction order
        let extended: Vec<Restart> = restarts
            .into_iter()
            .map(|r| {
                let mut x = DMatrix::zeros(k + 1, d);
                x.rows_mut(0, k).copy_from(&chosen);
                x.row_mut(k).copy_from(&r.x.row(0));
                Restart {
                    x,
                    converged: r.converged,
                }
            })
            .collect();
        let res = finish(acqf, extended, k + 1)?;
        chosen = res.x_star.clone();
        last = Some(res);
    }
    Ok(last.expect("q >= 1"))
}

/// Posterior-mean maximization with 10 restarts; returns the maximizer and μ*.
pub fn maximize_posterior_mean(
    model: &ModelList,
    objective: &ObjectiveSpec,
    inner: &BaseSampleSet,
    bounds: &[(f64, f64)],
    seed: u64,
) -> Result<(DMatrix<f64>, f64)> {
    let ctx = AcquisitionContext::new(model.clone(), objective.clone(), inner.clone());
    let pm = Acquisition::new(AcquisitionKind::PosteriorMean, ctx)?;
    let mut config = OptimizeConfig::new(bounds.to_vec(), 1);
    config.num_restarts = 10;
    let res = optimize_acqf(&pm, &config, seed)?;
    Ok((res.x_star, res.value))
}

/// Optimizes one-shot KG jointly over the `q` candidates and the fantasy points.
pub fn optimize_one_shot_kg(acqf: &Acquisition, config: &OptimizeConfig, seed: u64) -> Result<CandidateResult> {
    if acqf.kind() != AcquisitionKind::Okg {
        return Err(Error::Config("optimize_one_shot_kg needs a one-shot KG acquisition".into()));
    }
    if config.mode != OptimizeMode::Joint {
        return Err(Error::Config("one-shot KG is optimized jointly".into()));
    }
    let ctx = acqf.context();
    let d = ctx.d();
    config.validate(d)?;
    let q = config.q;

    let mut pm_ctx = ctx.clone();
    pm_ctx.x_pending = None;
    let pm = Acquisition::new(AcquisitionKind::PosteriorMean, pm_ctx)?;
    let by_pm = |pts: Vec<DMatrix<f64>>, keep: usize| -> Vec<DMatrix<f64>> {
        let mut ranked: Vec<(f64, DMatrix<f64>)> = pts
            .into_iter()
            .map(|p| (pm.value(&p).unwrap_or(f64::NEG_INFINITY), p))
            .filter(|(v, _)| v.is_finite())
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        ranked.into_iter().take(keep).map(|(_, p)| p).collect()
    };

    // anchors for the fantasy rows: best training points and best pool points by posterior mean
    let train = ctx.model.train_x();
    let mut anchors = by_pm((0..train.nrows()).map(|i| train.rows(i, 1).into_owned()).collect(), 5);
    let pm_pool = sobol_tuples(&config.bounds, 1, (config.raw_samples / q).max(16), seed.wrapping_add(1))?;
    anchors.extend(by_pm(pm_pool, 10));

    let pool = sobol_tuples(&config.bounds, q, config.raw_samples, seed)?
        .into_iter()
        .map(|x| {
            let mut pts = anchors.clone();
            pts.extend((0..q).map(|a| x.rows(a, 1).into_owned()));
            let xf = anchored_fantasy_rows(ctx, &x, &pts)?;
            Ok(stack(&x, &xf))
        })
        .collect::<Result<Vec<_>>>()?;
    let starts = select_starts(acqf, pool, config.num_restarts, config.eta, seed)?;
    let restarts = run_restarts(acqf, starts, config);
    finish(acqf, restarts, q)
}

/// For each fantasy, the anchor with the largest fantasy posterior mean
/// (objective applied to the per-output means).
fn anchored_fantasy_rows(ctx: &AcquisitionContext, x: &DMatrix<f64>, anchors: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let nf = ctx.num_fantasies;
    let m = ctx.m();
    let k = anchors.len();
    let d = x.ncols();
    let a_pts = ctx.with_pending_rows(x);
    let na = a_pts.nrows();
    let mut all = DMatrix::zeros(k + na, d);
    for (r, p) in anchors.iter().enumerate() {
        all.row_mut(r).copy_from(&p.row(0));
    }
    all.rows_mut(k, na).copy_from(&a_pts);
    let outer = ctx.base_samples.samples();
    let mut means = Vec::with_capacity(m);
    for (j, gp) in ctx.model.models().iter().enumerate() {
        let post = gp.posterior(&all, false)?;
        let mut saa = post.cov.view((k, k), (na, na)).into_owned();
        for i in 0..na {
            saa[(i, i)] += gp.noise_at_new();
        }
        let l = linalg::root_decomposition(&saa)?;
        let e = DMatrix::from_fn(na, nf, |a, i| outer[(i, a * m + j)]);
        let w = linalg::solve_lower_transpose(&l, &e);
        let mut mj = post.cov.view((0, k), (k, na)) * w;
        for r in 0..k {
            for i in 0..nf {
                mj[(r, i)] += post.mean[r];
            }
        }
        means.push(mj);
    }
    let mut xf = DMatrix::zeros(nf, d);
    let mut y = vec![0.0; m];
    let mut g = vec![0.0; m];
    for i in 0..nf {
        let mut best = (0, f64::NEG_INFINITY);
        for r in 0..k {
            for j in 0..m {
                y[j] = means[j][(r, i)];
            }
            let v = ctx.objective.eval_point(&y, &mut g);
            if v > best.1 {
                best = (r, v);
            }
        }
        xf.row_mut(i).copy_from(&anchors[best.0].row(0));
    }
    Ok(xf)
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    z.rows_mut(0, a.nrows()).copy_from(a);
    z.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    z
}
