//! One-call candidate generation from a fitted model.

use nalgebra::DMatrix;

use crate::acquisition::{Acquisition, AcquisitionContext, AcquisitionKind};
use crate::error::{Error, Result};
use crate::gp::ModelList;
use crate::objective::ObjectiveSpec;
use crate::optimize::{maximize_posterior_mean, optimize_acqf, optimize_one_shot_kg, CandidateResult, OptimizeConfig, OptimizeMode};
use crate::sampling::{draw_base_samples, scramble_seed_for, BaseSampleSet, SamplerMode, SobolEngine};

/// splitmix64-style seed combiner.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inner samples for posterior-mean evaluation under nonlinear objectives.
pub fn inner_samples(m: usize, seed: u64) -> Result<BaseSampleSet> {
    draw_base_samples(SamplerMode::Rqmc, seed, 32, 1, m)
}

#[derive(Debug, Clone)]
pub struct SuggestRequest {
    pub kind: AcquisitionKind,
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizeConfig,
    pub sampler: SamplerMode,
    /// MC samples, or fantasies for OKG (defaults 128 and 64).
    pub num_samples: Option<usize>,
    pub beta: f64,
    /// Incumbent for EI; defaults to the best objective value of the posterior mean at the training inputs.
    pub best_f: Option<f64>,
    /// Precomputed posterior-mean maximum for OKG.
    pub mu_star: Option<f64>,
    /// Integration points for NIPV; defaults to 256 Sobol points in the box.
    pub mc_points: Option<DMatrix<f64>>,
    pub seed: u64,
}

impl SuggestRequest {
    pub fn new(kind: AcquisitionKind, optimizer: OptimizeConfig) -> Self {
        SuggestRequest {
            kind,
            objective: ObjectiveSpec::Identity,
            optimizer,
            sampler: SamplerMode::Rqmc,
            num_samples: None,
            beta: 0.2,
            best_f: None,
            mu_star: None,
            mc_points: None,
            seed: 0,
        }
    }
}

/// Largest objective value of the posterior mean over the training inputs.
pub fn best_posterior_mean(model: &ModelList, objective: &ObjectiveSpec) -> Result<f64> {
    let x = model.train_x();
    let means = model
        .models()
        .iter()
        .map(|gp| gp.posterior_mean(x))
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; means.len()];
    let mut best = f64::NEG_INFINITY;
    for i in 0..x.nrows() {
        let y: Vec<f64> = means.iter().map(|mu| mu[i]).collect();
        best = best.max(objective.eval_point(&y, &mut grad));
    }
    Ok(best)
}

pub fn sobol_points_in_box(bounds: &[(f64, f64)], n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let d = bounds.len();
    let u = SobolEngine::new(d, scramble_seed_for(seed))?.draw(n);
    Ok(DMatrix::from_fn(n, d, |i, k| {
        let (lo, hi) = bounds[k];
        lo + (hi - lo) * u[(i, k)]
    }))
}

/// Builds the acquisition for `req` on `model` and maximizes it.
pub fn suggest(model: &ModelList, req: &SuggestRequest) -> Result<CandidateResult> {
    let kind = req.kind;
    if kind == AcquisitionKind::PosteriorMean {
        return Err(Error::Config("use maximize_posterior_mean for the posterior mean".into()));
    }
    let oc = &req.optimizer;
    oc.validate(model.d())?;
    if kind == AcquisitionKind::AnalyticEi && oc.q != 1 {
        return Err(Error::Config("analytic_ei proposes one point (q = 1)".into()));
    }
    let m = model.num_outputs();
    let q = oc.q;
    let seed = req.seed;
    // room for pending rows in sequential greedy
    let extra = if oc.mode == OptimizeMode::SequentialGreedy { q - 1 } else { 0 };
    let n_samples = req.num_samples.unwrap_or(if kind == AcquisitionKind::Okg { 64 } else { 128 });
    let inner = inner_samples(m, mix_seed(seed, 1))?;
    let (rows, n) = match kind {
        AcquisitionKind::Qnei => (model.train_x().nrows() + q + extra, n_samples),
        AcquisitionKind::Okg => (q, n_samples),
        AcquisitionKind::Nipv | AcquisitionKind::AnalyticEi => (q + extra, 1),
        _ => (q + extra, n_samples),
    };
    let base = draw_base_samples(req.sampler, seed, n, rows, m)?;
    let mut ctx = AcquisitionContext::new(model.clone(), req.objective.clone(), base)
        .with_beta(req.beta)
        .with_inner_samples(inner.clone());
    match kind {
        AcquisitionKind::Qei | AcquisitionKind::AnalyticEi => {
            let best_f = match req.best_f {
                Some(v) => v,
                None => best_posterior_mean(model, &req.objective)?,
            };
            ctx = ctx.with_best_f(best_f);
        }
        AcquisitionKind::Qnei => ctx = ctx.with_baseline(model.train_x().clone()),
        AcquisitionKind::Okg => {
            let mu_star = match req.mu_star {
                Some(v) => v,
                None => maximize_posterior_mean(model, &req.objective, &inner, &oc.bounds, mix_seed(seed, 2))?.1,
            };
            ctx = ctx.with_num_fantasies(n).with_mu_star(mu_star);
        }
        AcquisitionKind::Nipv => {
            let pts = match &req.mc_points {
                Some(p) => p.clone(),
                None => sobol_points_in_box(&oc.bounds, 256, mix_seed(seed, 5))?,
            };
            ctx = ctx.with_mc_points(pts);
        }
        _ => {}
    }
    let acqf = Acquisition::new(kind, ctx)?;
    if kind == AcquisitionKind::Okg {
        optimize_one_shot_kg(&acqf, oc, mix_seed(seed, 3))
    } else {
        optimize_acqf(&acqf, oc, mix_seed(seed, 3))
    }
}
