//! Empirical convergence of SAA maximizers of qEI against the analytic optimum.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acquisition::{Acquisition, AcquisitionContext, AcquisitionFunction, AcquisitionKind};
use crate::bench::closed_loop::mix;
use crate::error::{Error, Result};
use crate::gp::{GpModel, KernelParams};
use crate::objective::ObjectiveSpec;
use crate::optimize::{optimize_acqf, OptimizeConfig};
use crate::sampling::{draw_base_samples, qmc_sample_sizes, scramble_seed_for, SampleSizeSchedule, SamplerMode, SobolEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyOptimizer {
    Saa,
    ResampleAdam,
}

impl StudyOptimizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyOptimizer::Saa => "saa",
            StudyOptimizer::ResampleAdam => "resample_adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { d: 2, n: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub seed: u64,
    pub replications: usize,
    pub schedule: SampleSizeSchedule,
    /// Sizes below this are dropped from the schedule.
    pub min_size: usize,
    pub modes: Vec<SamplerMode>,
    pub optimizers: Vec<StudyOptimizer>,
    pub fixture: FixtureConfig,
    pub raw_samples: usize,
    pub num_restarts: usize,
    pub adam_steps: usize,
    pub adam_lr: f64,
    pub output: Option<std::path::PathBuf>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            seed: 0,
            replications: 250,
            schedule: SampleSizeSchedule {
                base: 2,
                max_multiplier: 1,
                k_max: 12,
            },
            min_size: 16,
            modes: vec![SamplerMode::Iid, SamplerMode::Rqmc],
            optimizers: vec![StudyOptimizer::Saa],
            fixture: FixtureConfig::default(),
            raw_samples: 64,
            num_restarts: 4,
            adam_steps: 200,
            adam_lr: 0.025,
            output: None,
        }
    }
}

impl ConvergenceConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: ConvergenceConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config("need at least 2 replications".into()));
        }
        if self.sizes()?.len() < 2 {
            return Err(Error::Config("need at least two sample sizes".into()));
        }
        if self.modes.is_empty() || self.optimizers.is_empty() {
            return Err(Error::Config("modes and optimizers must be non-empty".into()));
        }
        if self.fixture.d == 0 || self.fixture.n == 0 {
            return Err(Error::Config("fixture needs d >= 1 and n >= 1".into()));
        }
        if self.num_restarts == 0 || self.num_restarts > self.raw_samples {
            return Err(Error::Config("need 1 <= num_restarts <= raw_samples".into()));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Result<Vec<usize>> {
        Ok(qmc_sample_sizes(&self.schedule)
            .map_err(|e| Error::Config(e.to_string()))?
            .into_iter()
            .filter(|n| *n >= self.min_size)
            .collect())
    }
}

/// GP on a Sobol design with a single interior bump, plus its analytic EI optimum.
pub struct Fixture {
    pub model: GpModel,
    pub best_f: f64,
    pub x_star: DMatrix<f64>,
    pub alpha_star: f64,
}

impl Fixture {
    pub fn new(cfg: &FixtureConfig) -> Result<Self> {
        let d = cfg.d;
        let x = SobolEngine::new(d, scramble_seed_for(cfg.seed))?.draw(cfg.n);
        let y = DVector::from_fn(cfg.n, |i, _| {
            let r2: f64 = (0..d).map(|k| (x[(i, k)] - 0.45 - 0.05 * k as f64).powi(2)).sum();
            (-r2 / 0.08).exp()
        });
        let params = KernelParams {
            lengthscales: vec![0.25; d],
            outputscale: 0.3,
            mean_const: 0.0,
            noise_var_hom: 1e-4,
        };
        let model = GpModel::new(x, y.clone(), None, params)?;
        let best_f = y.max();
        let acqf = analytic(&model, best_f)?;
        let mut oc = OptimizeConfig::new(vec![(0.0, 1.0); d], 1);
        oc.raw_samples = 4096;
        oc.num_restarts = 32;
        oc.maxiter = 2000;
        oc.grad_tol = 1e-13;
        let res = optimize_acqf(&acqf, &oc, cfg.seed)?;
        Ok(Fixture {
            model,
            best_f,
            x_star: res.x_star,
            alpha_star: res.value,
        })
    }

    pub fn true_value(&self, x: &DMatrix<f64>) -> Result<f64> {
        analytic(&self.model, self.best_f)?.value(x)
    }
}

fn analytic(model: &GpModel, best_f: f64) -> Result<Acquisition> {
    let base = draw_base_samples(SamplerMode::Iid, 0, 1, 1, 1)?;
    let ctx = AcquisitionContext::new(model.clone(), ObjectiveSpec::Identity, base).with_best_f(best_f);
    Acquisition::new(AcquisitionKind::AnalyticEi, ctx)
}

fn qei(fx: &Fixture, mode: SamplerMode, seed: u64, n: usize) -> Result<Acquisition> {
    let base = draw_base_samples(mode, seed, n, 1, 1)?;
    let ctx = AcquisitionContext::new(fx.model.clone(), ObjectiveSpec::Identity, base).with_best_f(fx.best_f);
    Acquisition::new(AcquisitionKind::Qei, ctx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub optimizer: StudyOptimizer,
    pub mode: SamplerMode,
    pub n: usize,
    pub mean_gap: f64,
    pub var_gap: f64,
    pub mean_dist: f64,
    pub var_dist: f64,
}

/// OLS slopes of the log metrics against log N.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeRow {
    pub optimizer: StudyOptimizer,
    pub mode: SamplerMode,
    pub mean_gap: f64,
    pub var_gap: f64,
    pub mean_dist: f64,
    pub var_dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
    pub slopes: Vec<SlopeRow>,
    pub alpha_star: f64,
    pub x_star: Vec<f64>,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Slope of the least-squares line through `(ln x, ln y)`, skipping non-positive `y`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn saa_solution(fx: &Fixture, cfg: &ConvergenceConfig, mode: SamplerMode, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let acqf = qei(fx, mode, seed, n)?;
    let mut oc = OptimizeConfig::new(vec![(0.0, 1.0); fx.model.d()], 1);
    oc.raw_samples = cfg.raw_samples;
    oc.num_restarts = cfg.num_restarts;
    oc.grad_tol = 1e-10;
    oc.maxiter = 500;
    Ok(optimize_acqf(&acqf, &oc, seed)?.x_star)
}

/// Projected Adam with fresh base samples at every step.
fn adam_solution(fx: &Fixture, cfg: &ConvergenceConfig, mode: SamplerMode, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let d = fx.model.d();
    let mut x = DMatrix::from_element(1, d, 0.5);
    let mut m1 = DMatrix::zeros(1, d);
    let mut m2 = DMatrix::zeros(1, d);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for t in 1..=cfg.adam_steps {
        let acqf = qei(fx, mode, mix(seed, t as u64), n)?;
        let g = acqf.evaluate(&x)?.grad;
        m1 = &m1 * b1 + &g * (1.0 - b1);
        m2 = &m2 * b2 + g.map(|v| v * v) * (1.0 - b2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for k in 0..d {
            let step = cfg.adam_lr * (m1[(0, k)] / c1) / ((m2[(0, k)] / c2).sqrt() + eps);
            x[(0, k)] = (x[(0, k)] + step).clamp(0.0, 1.0);
        }
    }
    Ok(x)
}

pub fn run_convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceResult> {
    cfg.validate()?;
    let fx = Fixture::new(&cfg.fixture)?;
    let sizes = cfg.sizes()?;
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &opt in &cfg.optimizers {
        for &mode in &cfg.modes {
            let start = rows.len();
            for &n in &sizes {
                let mut gaps = Vec::with_capacity(cfg.replications);
                let mut dists = Vec::with_capacity(cfg.replications);
                for r in 0..cfg.replications {
                    let seed = mix(cfg.seed, r as u64);
                    let x = match opt {
                        StudyOptimizer::Saa => saa_solution(&fx, cfg, mode, n, seed)?,
                        StudyOptimizer::ResampleAdam => adam_solution(&fx, cfg, mode, n, seed)?,
                    };
                    gaps.push(1.0 - fx.true_value(&x)? / fx.alpha_star);
                    dists.push((&x - &fx.x_star).norm());
                }
                let (mean_gap, var_gap) = mean_var(&gaps);
                let (mean_dist, var_dist) = mean_var(&dists);
                rows.push(ConvergenceRow {
                    optimizer: opt,
                    mode,
                    n,
                    mean_gap,
                    var_gap,
                    mean_dist,
                    var_dist,
                });
            }
            let block = &rows[start..];
            let ns: Vec<f64> = block.iter().map(|r| r.n as f64).collect();
            let col = |f: fn(&ConvergenceRow) -> f64| -> Vec<f64> { block.iter().map(f).collect() };
            slopes.push(SlopeRow {
                optimizer: opt,
                mode,
                mean_gap: log_log_slope(&ns, &col(|r| r.mean_gap)),
                var_gap: log_log_slope(&ns, &col(|r| r.var_gap)),
                mean_dist: log_log_slope(&ns, &col(|r| r.mean_dist)),
                var_dist: log_log_slope(&ns, &col(|r| r.var_dist)),
            });
        }
    }
    Ok(ConvergenceResult {
        rows,
        slopes,
        alpha_star: fx.alpha_star,
        x_star: fx.x_star.iter().copied().collect(),
    })
}

fn mode_str(m: SamplerMode) -> &'static str {
    match m {
        SamplerMode::Iid => "iid",
        SamplerMode::Rqmc => "rqmc",
    }
}

/// Per-size rows followed by one `slope` row per optimizer and mode.
pub fn write_convergence_csv<W: Write>(res: &ConvergenceResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["optimizer", "mode", "n", "mean_gap", "var_gap", "mean_dist", "var_dist"])?;
    for r in &res.rows {
        w.write_record([
            r.optimizer.as_str().to_string(),
            mode_str(r.mode).to_string(),
            r.n.to_string(),
            r.mean_gap.to_string(),
            r.var_gap.to_string(),
            r.mean_dist.to_string(),
            r.var_dist.to_string(),
        ])?;
    }
    for s in &res.slopes {
        w.write_record([
            s.optimizer.as_str().to_string(),
            mode_str(s.mode).to_string(),
            "slope".to_string(),
            s.mean_gap.to_string(),
            s.var_gap.to_string(),
            s.mean_dist.to_string(),
            s.var_dist.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [16.0, 32.0, 64.0, 128.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((log_log_slope(&x, &y) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn default_sizes() {
        let c = ConvergenceConfig::default();
        assert_eq!(c.sizes().unwrap(), vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096]);
    }

    #[test]
    fn fixture_optimum_is_interior() {
        let fx = Fixture::new(&FixtureConfig::default()).unwrap();
        assert!(fx.alpha_star > 0.0);
        assert!(fx.x_star.iter().all(|v| *v > 1e-3 && *v < 1.0 - 1e-3), "{}", fx.x_star);
    }
}
