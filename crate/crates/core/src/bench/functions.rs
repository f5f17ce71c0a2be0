//! Synthetic test problems in maximization form.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionName {
    Branin,
    Rosenbrock,
    Ackley,
    Hartmann6,
    Hartmann6ConstrainedL1,
    Hartmann6ConstrainedL2,
}

impl FunctionName {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown test function '{s}'")))
    }
}

/// Minimization or maximization form of the literature definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: FunctionName,
    pub dim: usize,
    pub bounds: Vec<(f64, f64)>,
    pub noise_sd: f64,
    /// Optimal value in maximization form.
    pub known_optimum: f64,
    pub argmax: Vec<Vec<f64>>,
    pub sense: Sense,
}

const HART_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HART_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HART_P: [[f64; 6]; 4] = [
    [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
    [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
    [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
    [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
];
const HART_ARGMIN: [f64; 6] = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];

pub fn branin(x: &[f64]) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    let u = x[1] - b * x[0] * x[0] + c * x[0] - 6.0;
    u * u + 10.0 * (1.0 - t) * x[0].cos() + 10.0
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
        .sum()
}

pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + std::f64::consts::E
}

pub fn hartmann6(x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..6).map(|j| HART_A[i][j] * (x[j] - 1e-4 * HART_P[i][j]).powi(2)).sum();
            HART_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

impl TestFunction {
    /// `dim` applies to rosenbrock (default 3) and ackley (default 5).
    pub fn new(name: FunctionName, dim: Option<usize>, noise_sd: f64) -> Result<Self> {
        let fixed = |d: usize| -> Result<usize> {
            match dim {
                Some(k) if k != d => Err(Error::Config(format!("{name:?} has fixed dimension {d}"))),
                _ => Ok(d),
            }
        };
        let (dim, bounds, known_optimum, argmax) = match name {
            FunctionName::Branin => (
                fixed(2)?,
                vec![(-5.0, 10.0), (0.0, 15.0)],
                -0.397_887_357_729_738,
                vec![vec![-PI, 12.275], vec![PI, 2.275], vec![9.424_78, 2.475]],
            ),
            FunctionName::Rosenbrock => {
                let d = dim.unwrap_or(3);
                if d < 2 {
                    return Err(Error::Config("rosenbrock needs dim >= 2".into()));
                }
                (d, vec![(-5.0, 10.0); d], 0.0, vec![vec![1.0; d]])
            }
            FunctionName::Ackley => {
                let d = dim.unwrap_or(5);
                if d < 1 {
                    return Err(Error::Config("ackley needs dim >= 1".into()));
                }
                (d, vec![(-32.768, 32.768); d], 0.0, vec![vec![0.0; d]])
            }
            FunctionName::Hartmann6 | FunctionName::Hartmann6ConstrainedL1 | FunctionName::Hartmann6ConstrainedL2 => {
                (fixed(6)?, vec![(0.0, 1.0); 6], 3.322_368_011_415_515, vec![HART_ARGMIN.to_vec()])
            }
        };
        if !(noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be nonnegative".into()));
        }
        Ok(TestFunction {
            name,
            dim,
            bounds,
            noise_sd,
            known_optimum,
            argmax,
            sense: Sense::Minimize,
        })
    }

    pub fn is_constrained(&self) -> bool {
        matches!(
            self.name,
            FunctionName::Hartmann6ConstrainedL1 | FunctionName::Hartmann6ConstrainedL2
        )
    }

    /// Number of observed outputs (objective plus constraint).
    pub fn num_outputs(&self) -> usize {
        if self.is_constrained() { 2 } else { 1 }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("{:?} takes {} inputs, got {}", self.name, self.dim, x.len())));
        }
        for (k, (v, (lo, hi))) in x.iter().zip(&self.bounds).enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::OutOfBounds(format!("x[{k}] = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Noiseless outputs in maximization form: `[f]` or `[f, c]` with `c <= 0` feasible.
    pub fn outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match self.name {
            FunctionName::Branin => vec![-branin(x)],
            FunctionName::Rosenbrock => vec![-rosenbrock(x)],
            FunctionName::Ackley => vec![-ackley(x)],
            FunctionName::Hartmann6 => vec![-hartmann6(x)],
            FunctionName::Hartmann6ConstrainedL1 => {
                vec![-hartmann6(x), x.iter().map(|v| v.abs()).sum::<f64>() - 3.0]
            }
            FunctionName::Hartmann6ConstrainedL2 => {
                vec![-hartmann6(x), x.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0]
            }
        })
    }

    pub fn noisy_outputs<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut y = self.outputs(x)?;
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += self.noise_sd * z;
        }
        Ok(y)
    }

    /// Objective value with infeasible points scored as zero.
    pub fn true_value(&self, x: &[f64]) -> Result<f64> {
        let y = self.outputs(x)?;
        Ok(match y.as_slice() {
            [f, c] => {
                if *c <= 0.0 {
                    *f
                } else {
                    0.0
                }
            }
            _ => y[0],
        })
    }
}

/// First output in maximization form, optionally with Gaussian noise.
pub fn eval_test_function<R: Rng>(f: &TestFunction, x: &[f64], noisy: bool, rng: &mut R) -> Result<f64> {
    if noisy {
        Ok(f.noisy_outputs(x, rng)?[0])
    } else {
        Ok(f.outputs(x)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all() -> Vec<TestFunction> {
        [
            FunctionName::Branin,
            FunctionName::Rosenbrock,
            FunctionName::Ackley,
            FunctionName::Hartmann6,
            FunctionName::Hartmann6ConstrainedL1,
            FunctionName::Hartmann6ConstrainedL2,
        ]
        .into_iter()
        .map(|n| TestFunction::new(n, None, 0.5).unwrap())
        .collect()
    }

    #[test]
    fn optima_reproduce() {
        for f in all() {
            for x in &f.argmax {
                let v = f.true_value(x).unwrap();
                assert!((v - f.known_optimum).abs() < 1e-4, "{:?}: {v}", f.name);
            }
        }
    }

    #[test]
    fn branin_reference_value() {
        assert!((branin(&[PI, 2.275]) - 0.397887).abs() < 1e-4);
        assert!(ackley(&[0.0; 4]).abs() < 1e-14);
    }

    #[test]
    fn optimum_beats_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for f in all() {
            for _ in 0..2000 {
                let x: Vec<f64> = f.bounds.iter().map(|(lo, hi)| rng.random_range(*lo..*hi)).collect();
                assert!(f.true_value(&x).unwrap() <= f.known_optimum + 1e-9);
            }
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let f = TestFunction::new(FunctionName::Hartmann6, None, 0.0).unwrap();
        assert!(f.outputs(&[1.2, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(TestFunction::new(FunctionName::Branin, Some(3), 0.0).is_err());
    }

    #[test]
    fn noise_has_configured_sd() {
        let f = TestFunction::new(FunctionName::Branin, None, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = [1.0, 2.0];
        let clean = f.outputs(&x).unwrap()[0];
        let n = 20_000;
        let var = (0..n)
            .map(|_| (eval_test_function(&f, &x, true, &mut rng).unwrap() - clean).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.01);
    }
}
