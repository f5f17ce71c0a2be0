//! SAA maximization of acquisition functions.

mod acqf;
mod initial;
pub mod lbfgsb;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use acqf::{maximize_posterior_mean, optimize_acqf, optimize_one_shot_kg};
pub use initial::{gen_initial_conditions, sobol_tuples};
pub use lbfgsb::{bounded_quasi_newton, QuasiNewtonConfig, QuasiNewtonResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    #[default]
    Joint,
    SequentialGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub bounds: Vec<(f64, f64)>,
    pub q: usize,
    pub raw_samples: usize,
    pub num_restarts: usize,
    pub eta: f64,
    pub maxiter: usize,
    pub grad_tol: f64,
    pub mode: OptimizeMode,
}

impl OptimizeConfig {
    pub fn new(bounds: Vec<(f64, f64)>, q: usize) -> Self {
        OptimizeConfig {
            bounds,
            q,
            raw_samples: 1024 * q.max(1),
            num_restarts: 20,
            eta: 1.0,
            maxiter: 200,
            grad_tol: 1e-6,
            mode: OptimizeMode::Joint,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.bounds.len() != d {
            return Err(Error::Config(format!("{} bounds for d = {d}", self.bounds.len())));
        }
        if let Some((lo, hi)) = self.bounds.iter().find(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Config(format!("invalid bound pair ({lo}, {hi})")));
        }
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.num_restarts == 0 || self.num_restarts > self.raw_samples {
            return Err(Error::Config(format!(
                "need 1 <= num_restarts ({}) <= raw_samples ({})",
                self.num_restarts, self.raw_samples
            )));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::Config("eta must be nonnegative".into()));
        }
        Ok(())
    }

    pub(crate) fn quasi_newton(&self) -> QuasiNewtonConfig {
        QuasiNewtonConfig {
            maxiter: self.maxiter,
            grad_tol: self.grad_tol,
            ..QuasiNewtonConfig::default()
        }
    }
}

/// Best candidate set and per-restart diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub x_star: DMatrix<f64>,
    pub value: f64,
    pub restart_values: Vec<f64>,
    pub converged: Vec<bool>,
    /// Full optimized set for one-shot KG (candidates followed by fantasy points).
    pub x_full: Option<DMatrix<f64>>,
}
