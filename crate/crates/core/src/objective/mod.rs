//! Sample-level objectives `g` mapping per-output samples to one value per point.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise callback: outputs at one point → (value, gradient).
pub type GenericFn = dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync;

#[derive(Clone)]
pub struct GenericObjective(pub Arc<GenericFn>);

impl fmt::Debug for GenericObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GenericObjective(..)")
    }
}

fn default_rho() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Identity,
    Linear {
        weights: Vec<f64>,
    },
    Chebyshev {
        weights: Vec<f64>,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    FeasibilityWeighted {
        objective_index: usize,
        constraint_indices: Vec<usize>,
        tau: f64,
    },
    #[serde(skip)]
    Generic(GenericObjective),
}

impl ObjectiveSpec {
    pub fn generic<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        ObjectiveSpec::Generic(GenericObjective(Arc::new(f)))
    }

    /// Weights of an affine objective, or `None` when `g` is nonlinear.
    pub fn affine_weights(&self, m: usize) -> Option<Vec<f64>> {
        match self {
            ObjectiveSpec::Identity if m == 1 => Some(vec![1.0]),
            ObjectiveSpec::Linear { weights } => Some(weights.clone()),
            _ => None,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            ObjectiveSpec::Identity => {
                if m != 1 {
                    return Err(Error::Objective(format!("identity objective needs one output, got {m}")));
                }
            }
            ObjectiveSpec::Linear { weights } => {
                if weights.len() != m {
                    return Err(Error::Objective(format!("{} weights for {m} outputs", weights.len())));
                }
            }
            ObjectiveSpec::Chebyshev { weights, rho } => {
                if weights.len() != m {
                    return Err(Error::Objective(format!("{} weights for {m} outputs", weights.len())));
                }
                if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Objective("chebyshev weights must lie on the simplex".into()));
                }
                if !rho.is_finite() {
                    return Err(Error::Objective("rho must be finite".into()));
                }
            }
            ObjectiveSpec::FeasibilityWeighted {
                objective_index,
                constraint_indices,
                tau,
            } => {
                if *objective_index >= m || constraint_indices.iter().any(|c| *c >= m) {
                    return Err(Error::Objective(format!("output index out of range for {m} outputs")));
                }
                if !(*tau > 0.0) {
                    return Err(Error::Objective("tau must be > 0".into()));
                }
            }
            ObjectiveSpec::Generic(_) => {}
        }
        Ok(())
    }

    /// Value and gradient of `g` at one point's outputs `y` (length m).
    pub fn eval_point(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            ObjectiveSpec::Identity => {
                grad[0] = 1.0;
                y[0]
            }
            ObjectiveSpec::Linear { weights } => {
                grad.copy_from_slice(weights);
                weights.iter().zip(y).map(|(w, v)| w * v).sum()
            }
            ObjectiveSpec::Chebyshev { weights, rho } => {
                let mut arg = 0;
                let mut mn = f64::INFINITY;
                for (j, (w, v)) in weights.iter().zip(y).enumerate() {
                    if w * v < mn {
                        mn = w * v;
                        arg = j;
                    }
                }
                let mut lin = 0.0;
                for (j, (w, v)) in weights.iter().zip(y).enumerate() {
                    lin += w * v;
                    grad[j] = rho * w;
                }
                grad[arg] += weights[arg];
                rho * lin + mn
            }
            ObjectiveSpec::FeasibilityWeighted {
                objective_index,
                constraint_indices,
                tau,
            } => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let ws: Vec<f64> = constraint_indices.iter().map(|c| sigmoid(-y[*c] / tau)).collect();
                let prod: f64 = ws.iter().product();
                let obj = y[*objective_index];
                grad[*objective_index] += prod;
                for (k, c) in constraint_indices.iter().enumerate() {
                    let others: f64 = ws.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, w)| w).product();
                    grad[*c] += obj * others * (-ws[k] * (1.0 - ws[k]) / tau);
                }
                obj * prod
            }
            ObjectiveSpec::Generic(g) => {
                let (v, gr) = (g.0)(y);
                grad.copy_from_slice(&gr);
                v
            }
        }
    }

    /// Applies `g` to per-output samples (`m` matrices of N×q).
    pub fn apply(&self, xi: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        Ok(self.apply_with_grad(xi)?.0)
    }

    /// Like [`apply`](Self::apply) but also returns `∂g/∂ξ_j` for each output `j`.
    pub fn apply_with_grad(&self, xi: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let m = xi.len();
        if m == 0 {
            return Err(Error::Objective("no outputs".into()));
        }
        self.validate(m)?;
        let (n, q) = xi[0].shape();
        if xi.iter().any(|x| x.shape() != (n, q)) {
            return Err(Error::Shape("per-output sample blocks differ in shape".into()));
        }
        let mut out = DMatrix::zeros(n, q);
        let mut grads = vec![DMatrix::zeros(n, q); m];
        let mut y = vec![0.0; m];
        let mut g = vec![0.0; m];
        for a in 0..q {
            for i in 0..n {
                for j in 0..m {
                    y[j] = xi[j][(i, a)];
                }
                out[(i, a)] = self.eval_point(&y, &mut g);
                for j in 0..m {
                    grads[j][(i, a)] = g[j];
                }
            }
        }
        Ok((out, grads))
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Flat-Dirichlet draw on the m-simplex.
pub fn draw_chebyshev_weights(m: usize, seed: u64) -> Result<DVector<f64>> {
    if m < 2 {
        return Err(Error::Objective("chebyshev weights need m >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
    let s: f64 = e.iter().sum();
    Ok(DVector::from_iterator(m, e.iter().map(|v| v / s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(obj: &ObjectiveSpec, y: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; y.len()];
        let v = obj.eval_point(y, &mut g);
        (v, g)
    }

    #[test]
    fn chebyshev_hand_value() {
        let obj = ObjectiveSpec::Chebyshev {
            weights: vec![1.0, 0.0],
            rho: 0.05,
        };
        assert!((one(&obj, &[2.0, 5.0]).0 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn feasibility_limits() {
        let obj = ObjectiveSpec::FeasibilityWeighted {
            objective_index: 0,
            constraint_indices: vec![1],
            tau: 1.0,
        };
        assert!((one(&obj, &[3.0, -1e6]).0 - 3.0).abs() < 1e-12);
        assert!(one(&obj, &[3.0, 1e6]).0.abs() < 1e-12);
        let w1 = one(&obj, &[1.0, 0.2]).0;
        let w2 = one(&obj, &[1.0, 0.3]).0;
        assert!(w1 > w2 && w1 < 1.0 && w2 > 0.0);
    }

    #[test]
    fn identity_checks() {
        let xi = vec![DMatrix::from_element(2, 2, 1.5)];
        assert_eq!(ObjectiveSpec::Identity.apply(&xi).unwrap(), xi[0]);
        let two = vec![xi[0].clone(), xi[0].clone()];
        assert!(ObjectiveSpec::Identity.apply(&two).is_err());
        let bad = ObjectiveSpec::FeasibilityWeighted {
            objective_index: 0,
            constraint_indices: vec![3],
            tau: 1.0,
        };
        assert!(bad.apply(&two).is_err());
    }

    #[test]
    fn linear_homogeneous() {
        let obj = ObjectiveSpec::Linear { weights: vec![0.3, -1.2] };
        let y = [0.7, 2.0];
        let a = one(&obj, &y).0;
        let b = one(&obj, &[2.5 * y[0], 2.5 * y[1]]).0;
        assert!((b - 2.5 * a).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let objs = vec![
            ObjectiveSpec::Linear { weights: vec![0.3, -1.2, 0.5] },
            ObjectiveSpec::Chebyshev {
                weights: vec![0.2, 0.5, 0.3],
                rho: 0.05,
            },
            ObjectiveSpec::FeasibilityWeighted {
                objective_index: 0,
                constraint_indices: vec![1, 2],
                tau: 0.7,
            },
            ObjectiveSpec::generic(|y: &[f64]| (y[0] * y[1] + y[2].sin(), vec![y[1], y[0], y[2].cos()])),
        ];
        let y = [0.9, -0.4, 0.35];
        for obj in &objs {
            let (_, g) = one(obj, &y);
            for j in 0..3 {
                let h = 1e-6;
                let mut p = y;
                let mut m = y;
                p[j] += h;
                m[j] -= h;
                let fd = (one(obj, &p).0 - one(obj, &m).0) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-6, "{obj:?} {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn dirichlet_weights() {
        let w = draw_chebyshev_weights(4, 9).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-12 && w.iter().all(|v| *v >= 0.0));
        assert_eq!(w, draw_chebyshev_weights(4, 9).unwrap());
        assert!(draw_chebyshev_weights(1, 0).is_err());
        let mean: f64 = (0..10_000).map(|s| draw_chebyshev_weights(2, s).unwrap()[0]).sum::<f64>() / 1e4;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn config_roundtrip() {
        let obj = ObjectiveSpec::Chebyshev {
            weights: vec![0.5, 0.5],
            rho: 0.05,
        };
        let s = serde_json::to_string(&obj).unwrap();
        assert_eq!(s, r#"{"variant":"chebyshev","weights":[0.5,0.5],"rho":0.05}"#);
        let back: ObjectiveSpec = serde_json::from_str(r#"{"variant":"chebyshev","weights":[0.5,0.5]}"#).unwrap();
        assert!(matches!(back, ObjectiveSpec::Chebyshev { rho, .. } if rho == 0.05));
    }
}
