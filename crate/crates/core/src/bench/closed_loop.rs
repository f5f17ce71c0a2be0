//! Closed-loop BO runs on synthetic problems.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionKind;
use crate::bench::functions::{FunctionName, TestFunction};
use crate::error::{Error, Result};
use crate::gp::{fit_model_list, Dataset, FitConfig, GpModel, ModelList};
use crate::objective::ObjectiveSpec;
use crate::optimize::{maximize_posterior_mean, OptimizeConfig, OptimizeMode};
use crate::sampling::{scramble_seed_for, SamplerMode, SobolEngine};
use crate::suggest::{inner_samples, suggest, SuggestRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SobolRandom,
    AnalyticEi,
    Qei,
    Qnei,
    Qucb,
    Okg,
    Nipv,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::SobolRandom => "sobol_random",
            Algorithm::AnalyticEi => "analytic_ei",
            Algorithm::Qei => "qei",
            Algorithm::Qnei => "qnei",
            Algorithm::Qucb => "qucb",
            Algorithm::Okg => "okg",
            Algorithm::Nipv => "nipv",
        }
    }

    fn kind(&self) -> Option<AcquisitionKind> {
        match self {
            Algorithm::SobolRandom => None,
            Algorithm::AnalyticEi => Some(AcquisitionKind::AnalyticEi),
            Algorithm::Qei => Some(AcquisitionKind::Qei),
            Algorithm::Qnei => Some(AcquisitionKind::Qnei),
            Algorithm::Qucb => Some(AcquisitionKind::Qucb),
            Algorithm::Okg => Some(AcquisitionKind::Okg),
            Algorithm::Nipv => Some(AcquisitionKind::Nipv),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionMode {
    InSample,
    #[default]
    OutOfSample,
}

impl SuggestionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SuggestionMode::InSample => "in_sample",
            SuggestionMode::OutOfSample => "out_of_sample",
        }
    }
}

/// Overrides for the acquisition optimizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerOptions {
    pub raw_samples: Option<usize>,
    pub num_restarts: Option<usize>,
    pub maxiter: Option<usize>,
    pub eta: Option<f64>,
    #[serde(default)]
    pub mode: OptimizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Restarts for the first fit of a trial.
    pub initial_restarts: usize,
    /// Restarts for later fits; the first starts from the previous model.
    pub restarts: usize,
    pub maxiter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            initial_restarts: 8,
            restarts: 8,
            maxiter: 100,
        }
    }
}

fn one() -> usize {
    1
}
fn default_noise_sd() -> f64 {
    0.5
}
fn default_sampler() -> SamplerMode {
    SamplerMode::Rqmc
}
fn default_beta() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub function: FunctionName,
    #[serde(default)]
    pub dim: Option<usize>,
    pub algorithm: Algorithm,
    #[serde(default = "one")]
    pub q: usize,
    pub iterations: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub suggestion_mode: SuggestionMode,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerMode,
    /// MC samples, or fantasies for okg (defaults 128 and 64).
    #[serde(default)]
    pub num_samples: Option<usize>,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Sigmoid temperature for constraints; defaults to 1e-3 times the
    /// spread of the observed constraint values.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Record wall-clock milliseconds per iteration (0 otherwise).
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.iterations == 0 || self.q == 0 {
            return Err(Error::Config("trials, iterations and q must be at least 1".into()));
        }
        if self.algorithm == Algorithm::AnalyticEi && self.q != 1 {
            return Err(Error::Config("analytic_ei proposes one point per iteration (q = 1)".into()));
        }
        if self.algorithm == Algorithm::Okg && self.optimizer.mode != OptimizeMode::Joint {
            return Err(Error::Config("okg is optimized jointly".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(Error::Config("tau must be positive".into()));
            }
        }
        if self.num_samples == Some(0) {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        TestFunction::new(self.function, self.dim, self.noise_sd)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub iteration: usize,
    pub algorithm: Algorithm,
    pub suggestion_mode: SuggestionMode,
    pub x: Vec<f64>,
    pub true_value: f64,
    pub best_so_far: f64,
    pub wall_ms: u64,
}

pub(crate) use crate::suggest::mix_seed as mix;

struct Trial<'a> {
    config: &'a RunConfig,
    f: TestFunction,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    model: Option<ModelList>,
    noise: ChaCha8Rng,
}

impl Trial<'_> {
    fn observe(&mut self, pts: &DMatrix<f64>) -> Result<()> {
        let d = self.f.dim;
        let m = self.f.num_outputs();
        let n0 = self.x.nrows();
        let k = pts.nrows();
        let mut x = DMatrix::zeros(n0 + k, d);
        let mut y = DMatrix::zeros(n0 + k, m);
        x.rows_mut(0, n0).copy_from(&self.x);
        y.rows_mut(0, n0).copy_from(&self.y);
        for a in 0..k {
            let row: Vec<f64> = pts.row(a).iter().copied().collect();
            let obs = self.f.noisy_outputs(&row, &mut self.noise)?;
            x.row_mut(n0 + a).copy_from(&pts.row(a));
            for j in 0..m {
                y[(n0 + a, j)] = obs[j];
            }
        }
        self.x = x;
        self.y = y;
        Ok(())
    }

    fn fit(&mut self, seed: u64) -> Result<()> {
        let data = Dataset::new(self.x.clone(), self.y.clone(), None)?;
        let opts = &self.config.fit;
        let cfg = FitConfig {
            num_restarts: if self.model.is_some() { opts.restarts } else { opts.initial_restarts }.max(1),
            seed,
            maxiter: opts.maxiter,
            input_bounds: Some(self.f.bounds.clone()),
            ..FitConfig::default()
        };
        match fit_model_list(&data, &cfg, self.model.as_ref()) {
            Ok(m) => self.model = Some(m),
            Err(e) => {
                // keep the previous hyperparameters
                let prev = self.model.as_ref().ok_or(e)?;
                let models = prev
                    .models()
                    .iter()
                    .enumerate()
                    .map(|(j, gp)| {
                        let (yj, _) = data.output(j);
                        GpModel::new(self.x.clone(), yj, None, gp.params().clone())
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.model = Some(ModelList::new(models)?);
            }
        }
        Ok(())
    }

    fn objective(&self) -> ObjectiveSpec {
        if !self.f.is_constrained() {
            return ObjectiveSpec::Identity;
        }
        let tau = self.config.tau.unwrap_or_else(|| {
            let c = self.y.column(1);
            let mean = c.mean();
            let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
            1e-3 * if sd > 0.0 { sd } else { 1.0 }
        });
        ObjectiveSpec::FeasibilityWeighted {
            objective_index: 0,
            constraint_indices: vec![1],
            tau,
        }
    }

    fn in_sample(&self) -> Vec<f64> {
        let score = |i: usize| -> f64 {
            if self.f.is_constrained() {
                if self.y[(i, 1)] <= 0.0 {
                    self.y[(i, 0)]
                } else {
                    0.0
                }
            } else {
                self.y[(i, 0)]
            }
        };
        let mut best = 0;
        for i in 1..self.x.nrows() {
            if score(i) > score(best) {
                best = i;
            }
        }
        self.x.row(best).iter().copied().collect()
    }
}

fn optimizer_config(config: &RunConfig, bounds: &[(f64, f64)]) -> OptimizeConfig {
    let mut oc = OptimizeConfig::new(bounds.to_vec(), config.q);
    let o = &config.optimizer;
    if let Some(v) = o.raw_samples {
        oc.raw_samples = v;
    }
    if let Some(v) = o.num_restarts {
        oc.num_restarts = v;
    }
    if let Some(v) = o.maxiter {
        oc.maxiter = v;
    }
    if let Some(v) = o.eta {
        oc.eta = v;
    }
    oc.mode = o.mode;
    oc
}

/// Proposes the next batch from the current model.
fn propose(
    trial: &Trial,
    kind: AcquisitionKind,
    pm_cache: Option<f64>,
    mc_points: &DMatrix<f64>,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let config = trial.config;
    let model = trial.model.as_ref().expect("fitted before proposing");
    let mut req = SuggestRequest::new(kind, optimizer_config(config, &trial.f.bounds));
    req.objective = trial.objective();
    req.sampler = config.sampler;
    req.num_samples = config.num_samples;
    req.beta = config.beta;
    req.mu_star = pm_cache;
    req.mc_points = Some(mc_points.clone());
    req.seed = seed;
    Ok(suggest(model, &req)?.x_star)
}

fn to_box(bounds: &[(f64, f64)], u: DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(u.nrows(), bounds.len(), |i, k| {
        let (lo, hi) = bounds[k];
        lo + (hi - lo) * u[(i, k)]
    })
}

/// The 2d+2 Sobol points that open trial `t`; shared by all algorithms.
pub fn initial_design(config: &RunConfig, t: usize) -> Result<DMatrix<f64>> {
    let f = TestFunction::new(config.function, config.dim, config.noise_sd)?;
    let st = mix(config.seed, t as u64);
    let u = SobolEngine::new(f.dim, scramble_seed_for(st))?.draw(2 * f.dim + 2);
    Ok(to_box(&f.bounds, u))
}

fn run_trial(config: &RunConfig, t: usize) -> Result<Vec<TrialRecord>> {
    let f = TestFunction::new(config.function, config.dim, config.noise_sd)?;
    let d = f.dim;
    let st = mix(config.seed, t as u64);
    let mut sobol = SobolEngine::new(d, scramble_seed_for(st))?;
    let to_box = |u: DMatrix<f64>| to_box(&f.bounds, u);
    let init = to_box(sobol.draw(2 * d + 2));
    let mut trial = Trial {
        config,
        f: f.clone(),
        x: DMatrix::zeros(0, d),
        y: DMatrix::zeros(0, f.num_outputs()),
        model: None,
        noise: ChaCha8Rng::seed_from_u64(mix(st, 0x6e_6f69_7365)),
    };
    trial.observe(&init)?;
    let needs_model = config.algorithm != Algorithm::SobolRandom || config.suggestion_mode == SuggestionMode::OutOfSample;
    if needs_model {
        trial.fit(mix(st, 0))?;
    }
    let mc_points = to_box(
        SobolEngine::new(d, scramble_seed_for(mix(st, 0x6d63)))?.draw(256),
    );
    let mut pm_cache: Option<f64> = None;
    let mut best = f64::NEG_INFINITY;
    let mut records = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let started = Instant::now();
        let seed = mix(st, it as u64);
        let batch = match config.algorithm.kind() {
            None => to_box(sobol.draw(config.q)),
            Some(kind) => propose(&trial, kind, pm_cache.take(), &mc_points, seed)?,
        };
        trial.observe(&batch)?;
        if needs_model {
            trial.fit(seed)?;
        }
        let x = match config.suggestion_mode {
            SuggestionMode::InSample => trial.in_sample(),
            SuggestionMode::OutOfSample => {
                let model = trial.model.as_ref().expect("fitted");
                let objective = trial.objective();
                let inner = inner_samples(model.num_outputs(), mix(mix(st, it as u64 + 1), 1))?;
                let (xs, mu) = maximize_posterior_mean(model, &objective, &inner, &f.bounds, mix(seed, 4))?;
                // same inner samples as the next proposal, so μ* carries over
                pm_cache = Some(mu);
                xs.row(0).iter().copied().collect()
            }
        };
        let true_value = f.true_value(&x)?;
        best = best.max(true_value);
        records.push(TrialRecord {
            trial: t,
            iteration: it,
            algorithm: config.algorithm,
            suggestion_mode: config.suggestion_mode,
            x,
            true_value,
            best_so_far: best,
            wall_ms: if config.timing { started.elapsed().as_millis() as u64 } else { 0 },
        });
    }
    Ok(records)
}

/// Runs every trial of `config` in order.
pub fn run_closed_loop(config: &RunConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.trials * config.iterations);
    for t in 0..config.trials {
        out.extend(run_trial(config, t)?);
    }
    Ok(out)
}

/// Closed loop on a constrained problem with a feasibility-weighted objective.
pub fn run_constrained(config: &RunConfig) -> Result<Vec<TrialRecord>> {
    let f = TestFunction::new(config.function, config.dim, config.noise_sd)?;
    if !f.is_constrained() {
        return Err(Error::Config(format!("{:?} has no constraint", config.function)));
    }
    run_closed_loop(config)
}

/// CSV with header `trial,iteration,algorithm,suggestion_mode,x1..xd,true_value,best_so_far,wall_ms`.
pub fn write_records_csv<W: Write>(records: &[TrialRecord], d: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trial".to_string(), "iteration".into(), "algorithm".into(), "suggestion_mode".into()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.extend(["true_value".to_string(), "best_so_far".into(), "wall_ms".into()]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.trial.to_string(),
            r.iteration.to_string(),
            r.algorithm.as_str().to_string(),
            r.suggestion_mode.as_str().to_string(),
        ];
        row.extend(r.x.iter().map(|v| v.to_string()));
        row.extend([r.true_value.to_string(), r.best_so_far.to_string(), r.wall_ms.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
