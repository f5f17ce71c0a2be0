//! Boltzmann-weighted start points from a quasi-random pool.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquisition::AcquisitionFunction;
use crate::error::{Error, Result};
use crate::optimize::OptimizeConfig;
use crate::sampling::{scramble_seed_for, SobolEngine};

const FLAT_SD: f64 = 1e-12;
const MIN_GRAD_NORM: f64 = 1e-12;

/// `count` quasi-random `rows × d` matrices inside `bounds`.
pub fn sobol_tuples(bounds: &[(f64, f64)], rows: usize, count: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    let d = bounds.len();
    let mut engine = SobolEngine::new(rows * d, scramble_seed_for(seed))?;
    let u = engine.draw(count);
    Ok((0..count)
        .map(|t| {
            DMatrix::from_fn(rows, d, |a, k| {
                let (lo, hi) = bounds[k];
                lo + (hi - lo) * u[(t, a * d + k)]
            })
        })
        .collect())
}

/// Draw order of a weighted sample without replacement; weights ∝ exp(η v).
pub(crate) fn boltzmann_order(values: &[f64], eta: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut weights: Vec<f64> = if sd < FLAT_SD || !sd.is_finite() {
        vec![1.0; n]
    } else {
        let z: Vec<f64> = values.iter().map(|v| eta * (v - mean) / sd).collect();
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        z.iter().map(|v| (v - zmax).exp()).collect()
    };
    let mut taken = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = (0..n).filter(|i| !taken[*i]).map(|i| weights[i]).sum();
        let mut pick = None;
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            for i in (0..n).filter(|i| !taken[*i] && weights[*i] > 0.0) {
                pick = Some(i);
                if u < weights[i] {
                    break;
                }
                u -= weights[i];
            }
        }
        let pick = pick.unwrap_or_else(|| (0..n).find(|i| !taken[*i]).expect("entry left"));
        taken[pick] = true;
        weights[pick] = 0.0;
        order.push(pick);
    }
    order
}

/// Start points for `optimize_acqf`: Sobol pool of `raw_samples` tuples,
/// values standardized, `num_restarts` drawn without replacement with
/// probability ∝ exp(η v). Starts with a vanishing gradient are skipped
/// while other candidates remain.
pub fn gen_initial_conditions<A: AcquisitionFunction>(
    acqf: &A,
    config: &OptimizeConfig,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    config.validate(acqf.dim())?;
    let rows = acqf.rows_for(config.q);
    let pool = sobol_tuples(&config.bounds, rows, config.raw_samples, seed)?;
    select_starts(acqf, pool, config.num_restarts, config.eta, seed)
}

pub(crate) fn select_starts<A: AcquisitionFunction>(
    acqf: &A,
    pool: Vec<DMatrix<f64>>,
    num: usize,
    eta: f64,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    let mut finite = Vec::with_capacity(pool.len());
    let mut values = Vec::with_capacity(pool.len());
    for x in pool {
        if let Ok(v) = acqf.value(&x) {
            if v.is_finite() {
                values.push(v);
                finite.push(x);
            }
        }
    }
    if finite.is_empty() {
        return Err(Error::Optimization("acquisition is non-finite on every raw sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1c0d);
    let order = boltzmann_order(&values, eta, &mut rng);
    let mut chosen = Vec::with_capacity(num);
    let mut flat = Vec::new();
    for idx in order {
        if chosen.len() == num {
            break;
        }
        let x = &finite[idx];
        let ok = match acqf.evaluate(x) {
            Ok(av) => av.value.is_finite() && av.grad.norm() >= MIN_GRAD_NORM,
            Err(_) => false,
        };
        if ok {
            chosen.push(x.clone());
        } else {
            flat.push(x.clone());
        }
    }
    for x in flat {
        if chosen.len() == num {
            break;
        }
        chosen.push(x);
    }
    Ok(chosen)
}
