//! Acquisition functions returning values and exact gradients.

mod analytic;
mod kg;
pub(crate) mod mc;
mod mc_acqf;
mod nipv;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::ModelList;
use crate::objective::ObjectiveSpec;
use crate::sampling::BaseSampleSet;

pub use analytic::{analytic_ei, expected_improvement_closed_form};
pub use nipv::integrated_posterior_variance;

/// Value and gradient with respect to every row of the evaluated set.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionValue {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

/// Model, objective, frozen base samples, pending points and utility parameters.
#[derive(Debug, Clone)]
pub struct AcquisitionContext {
    pub model: ModelList,
    pub objective: ObjectiveSpec,
    pub base_samples: BaseSampleSet,
    pub x_pending: Option<DMatrix<f64>>,
    pub best_f: Option<f64>,
    pub beta: f64,
    pub x_baseline: Option<DMatrix<f64>>,
    pub num_fantasies: usize,
    pub inner_base_samples: Option<BaseSampleSet>,
    pub mc_points: Option<DMatrix<f64>>,
    /// Current maximum of the posterior mean objective (one-shot KG).
    pub mu_star: Option<f64>,
}

impl AcquisitionContext {
    pub fn new(model: impl Into<ModelList>, objective: ObjectiveSpec, base_samples: BaseSampleSet) -> Self {
        AcquisitionContext {
            model: model.into(),
            objective,
            base_samples,
            x_pending: None,
            best_f: None,
            beta: 0.2,
            x_baseline: None,
            num_fantasies: 64,
            inner_base_samples: None,
            mc_points: None,
            mu_star: None,
        }
    }

    pub fn with_pending(mut self, p: Option<DMatrix<f64>>) -> Self {
        self.x_pending = p.filter(|p| p.nrows() > 0);
        self
    }
    pub fn with_best_f(mut self, best_f: f64) -> Self {
        self.best_f = Some(best_f);
        self
    }
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
    pub fn with_baseline(mut self, b: DMatrix<f64>) -> Self {
        self.x_baseline = Some(b);
        self
    }
    pub fn with_num_fantasies(mut self, n: usize) -> Self {
        self.num_fantasies = n;
        self
    }
    pub fn with_inner_samples(mut self, e: BaseSampleSet) -> Self {
        self.inner_base_samples = Some(e);
        self
    }
    pub fn with_mc_points(mut self, m: DMatrix<f64>) -> Self {
        self.mc_points = Some(m);
        self
    }
    pub fn with_mu_star(mut self, mu: f64) -> Self {
        self.mu_star = Some(mu);
        self
    }

    pub fn d(&self) -> usize {
        self.model.d()
    }
    pub fn m(&self) -> usize {
        self.model.num_outputs()
    }

    fn check_x(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.d() {
            return Err(Error::Shape(format!("X has {} columns, model has d = {}", x.ncols(), self.d())));
        }
        if x.nrows() == 0 {
            return Err(Error::Shape("X needs at least one row".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("candidate set".into()));
        }
        Ok(())
    }

    /// `[X; X_pending]`.
    pub(crate) fn with_pending_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.x_pending {
            Some(p) => {
                let mut z = DMatrix::zeros(x.nrows() + p.nrows(), x.ncols());
                z.rows_mut(0, x.nrows()).copy_from(x);
                z.rows_mut(x.nrows(), p.nrows()).copy_from(p);
                z
            }
            None => x.clone(),
        }
    }

    fn inner_samples(&self) -> &BaseSampleSet {
        self.inner_base_samples.as_ref().unwrap_or(&self.base_samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    AnalyticEi,
    Qei,
    Qnei,
    Qucb,
    PosteriorMean,
    Okg,
    Nipv,
}

impl AcquisitionKind {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown acquisition function {s:?}")))
    }
}

/// Interface used by the optimizers.
pub trait AcquisitionFunction: Sync {
    /// Input dimension.
    fn dim(&self) -> usize;

    /// Rows of the optimized matrix for a batch of `q` candidates.
    fn rows_for(&self, q: usize) -> usize {
        q
    }

    fn evaluate(&self, x: &DMatrix<f64>) -> Result<AcquisitionValue>;

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        Ok(self.evaluate(x)?.value)
    }

    /// Same acquisition with `pending` appended to the pending set.
    fn with_pending(&self, pending: Option<&DMatrix<f64>>) -> Result<Self>
    where
        Self: Sized;
}

#[derive(Debug, Default)]
struct Cache {
    prefix: Option<mc::Prefix>,
    baseline_max: Option<Vec<f64>>,
    nipv: Option<nipv::NipvCache>,
}

/// A context bound to one acquisition kind, with per-iteration caches.
#[derive(Debug, Clone)]
pub struct Acquisition {
    kind: AcquisitionKind,
    ctx: Arc<AcquisitionContext>,
    cache: Arc<Cache>,
}

impl Acquisition {
    pub fn new(kind: AcquisitionKind, ctx: AcquisitionContext) -> Result<Self> {
        ctx.objective.validate(ctx.m())?;
        let mut cache = Cache::default();
        match kind {
            AcquisitionKind::AnalyticEi => {
                if ctx.m() != 1 {
                    return Err(Error::Acquisition("analytic EI needs a single-output model".into()));
                }
                if ctx.best_f.is_none() {
                    return Err(Error::Acquisition("analytic EI needs best_f".into()));
                }
            }
            AcquisitionKind::Qei => {
                if ctx.best_f.is_none() {
                    return Err(Error::Acquisition("qEI needs best_f".into()));
                }
            }
            AcquisitionKind::Qnei => {
                let b = ctx
                    .x_baseline
                    .as_ref()
                    .filter(|b| b.nrows() > 0)
                    .ok_or_else(|| Error::Acquisition("qNEI needs a non-empty baseline".into()))?;
                if b.ncols() != ctx.d() {
                    return Err(Error::Shape("baseline column count differs from d".into()));
                }
                let prefix = mc::build_prefix(&ctx.model, b, &ctx.base_samples)?;
                let xi_b: Vec<DMatrix<f64>> = prefix.outs.iter().map(|o| o.xi.clone()).collect();
                let g_b = ctx.objective.apply(&xi_b)?;
                cache.baseline_max = Some(g_b.row_iter().map(|r| r.max()).collect());
                cache.prefix = Some(prefix);
            }
            AcquisitionKind::Qucb => {
                if !(ctx.beta > 0.0) {
                    return Err(Error::Acquisition("qUCB needs beta > 0".into()));
                }
            }
            AcquisitionKind::PosteriorMean => {}
            AcquisitionKind::Okg => {
                if ctx.mu_star.is_none() {
                    return Err(Error::Acquisition("one-shot KG needs mu_star".into()));
                }
                if ctx.num_fantasies == 0 || ctx.base_samples.n() != ctx.num_fantasies {
                    return Err(Error::Acquisition(format!(
                        "one-shot KG needs one outer base sample per fantasy ({} rows for {} fantasies)",
                        ctx.base_samples.n(),
                        ctx.num_fantasies
                    )));
                }
            }
            AcquisitionKind::Nipv => {
                let mc_points = ctx
                    .mc_points
                    .as_ref()
                    .filter(|m| m.nrows() > 0)
                    .ok_or_else(|| Error::Acquisition("NIPV needs non-empty mc_points".into()))?;
                cache.nipv = Some(nipv::NipvCache::new(&ctx.model, mc_points)?);
            }
        }
        if let Some(p) = &ctx.x_pending {
            if p.ncols() != ctx.d() {
                return Err(Error::Shape("pending points column count differs from d".into()));
            }
        }
        Ok(Acquisition {
            kind,
            ctx: Arc::new(ctx),
            cache: Arc::new(cache),
        })
    }

    pub fn kind(&self) -> AcquisitionKind {
        self.kind
    }
    pub fn context(&self) -> &AcquisitionContext {
        &self.ctx
    }

    fn eval(&self, x: &DMatrix<f64>, want_grad: bool) -> Result<AcquisitionValue> {
        let ctx = &*self.ctx;
        ctx.check_x(x)?;
        match self.kind {
            AcquisitionKind::AnalyticEi => {
                if x.nrows() != 1 {
                    return Err(Error::Acquisition("analytic EI is defined for q = 1".into()));
                }
                analytic_ei(&ctx.model.models()[0], x, ctx.best_f.expect("checked"))
            }
            AcquisitionKind::Qei => mc_acqf::qei(ctx, x, want_grad),
            AcquisitionKind::Qnei => mc_acqf::qnei(
                ctx,
                self.cache.prefix.as_ref().expect("built"),
                self.cache.baseline_max.as_deref().expect("built"),
                x,
                want_grad,
            ),
            AcquisitionKind::Qucb => mc_acqf::qucb(ctx, x, want_grad),
            AcquisitionKind::PosteriorMean => kg::posterior_mean(ctx, x, want_grad),
            AcquisitionKind::Okg => kg::one_shot_kg(ctx, x, want_grad),
            AcquisitionKind::Nipv => nipv::qnipv(ctx, self.cache.nipv.as_ref().expect("built"), x, want_grad),
        }
    }
}

impl AcquisitionFunction for Acquisition {
    fn dim(&self) -> usize {
        self.ctx.d()
    }

    fn rows_for(&self, q: usize) -> usize {
        match self.kind {
            AcquisitionKind::Okg => q + self.ctx.num_fantasies,
            _ => q,
        }
    }

    fn evaluate(&self, x: &DMatrix<f64>) -> Result<AcquisitionValue> {
        self.eval(x, true)
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        Ok(self.eval(x, false)?.value)
    }

    fn with_pending(&self, pending: Option<&DMatrix<f64>>) -> Result<Self> {
        let mut ctx = (*self.ctx).clone();
        ctx.x_pending = match (ctx.x_pending.take(), pending) {
            (p, None) => p,
            (None, Some(p)) => Some(p.clone()),
            (Some(a), Some(b)) => {
                let mut z = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
                z.rows_mut(0, a.nrows()).copy_from(&a);
                z.rows_mut(a.nrows(), b.nrows()).copy_from(b);
                Some(z)
            }
        };
        Ok(Acquisition {
            kind: self.kind,
            ctx: Arc::new(ctx),
            cache: Arc::clone(&self.cache),
        })
    }
}

pub fn q_expected_improvement(ctx: &AcquisitionContext, x: &DMatrix<f64>) -> Result<AcquisitionValue> {
    Acquisition::new(AcquisitionKind::Qei, ctx.clone())?.evaluate(x)
}

pub fn q_noisy_expected_improvement(ctx: &AcquisitionContext, x: &DMatrix<f64>) -> Result<AcquisitionValue> {
    Acquisition::new(AcquisitionKind::Qnei, ctx.clone())?.evaluate(x)
}

pub fn q_upper_confidence_bound(ctx: &AcquisitionContext, x: &DMatrix<f64>) -> Result<AcquisitionValue> {
    Acquisition::new(AcquisitionKind::Qucb, ctx.clone())?.evaluate(x)
}

pub fn posterior_mean_and_simple_regret(ctx: &AcquisitionContext, x: &DMatrix<f64>) -> Result<AcquisitionValue> {
    Acquisition::new(AcquisitionKind::PosteriorMean, ctx.clone())?.evaluate(x)
}

pub fn q_knowledge_gradient_one_shot(ctx: &AcquisitionContext, x_aug: &DMatrix<f64>) -> Result<AcquisitionValue> {
    Acquisition::new(AcquisitionKind::Okg, ctx.clone())?.evaluate(x_aug)
}

pub fn q_neg_integrated_posterior_variance(ctx: &AcquisitionContext, x: &DMatrix<f64>) -> Result<AcquisitionValue> {
    Acquisition::new(AcquisitionKind::Nipv, ctx.clone())?.evaluate(x)
}
