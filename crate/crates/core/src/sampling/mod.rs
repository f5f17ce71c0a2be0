//! Quasi-random and pseudo-random base samples.

mod normal;
mod sobol;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GaussianPosterior;
use crate::linalg::root_decomposition;

pub use normal::{inverse_normal_cdf, norm_cdf, norm_pdf};
pub(crate) use normal::inv_norm_unchecked;
pub use sobol::{max_dimension, sobol_draw, SobolEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Iid,
    Rqmc,
}

/// Frozen standard-normal draws, one row per sample.
///
/// Columns are point-major: for `q` points and `m` outputs, column
/// `a * m + j` belongs to point `a`, output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSampleSet {
    e: DMatrix<f64>,
    mode: SamplerMode,
    seed: u64,
}

impl BaseSampleSet {
    pub fn from_matrix(e: DMatrix<f64>, mode: SamplerMode, seed: u64) -> Self {
        BaseSampleSet { e, mode, seed }
    }
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.e
    }
    pub fn n(&self) -> usize {
        self.e.nrows()
    }
    pub fn width(&self) -> usize {
        self.e.ncols()
    }
    pub fn mode(&self) -> SamplerMode {
        self.mode
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Samples for output `j` of the first `q` points (N×q).
    pub fn output_block(&self, q: usize, m: usize, j: usize) -> Result<DMatrix<f64>> {
        let required = q * m;
        if required > self.width() {
            return Err(Error::BaseSampleShape {
                required,
                available: self.width(),
            });
        }
        Ok(DMatrix::from_fn(self.n(), q, |i, a| self.e[(i, a * m + j)]))
    }
}

/// Nonzero scramble seed derived from a user seed.
pub(crate) fn scramble_seed_for(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)).max(1)
}

/// Draws `N × (q·m)` base samples.
pub fn draw_base_samples(mode: SamplerMode, seed: u64, n: usize, q: usize, m: usize) -> Result<BaseSampleSet> {
    if n == 0 {
        return Err(Error::Domain("need at least one base sample".into()));
    }
    let width = q * m;
    if width == 0 {
        return Err(Error::Domain("q and m must be >= 1".into()));
    }
    let e = match mode {
        SamplerMode::Iid => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut e = DMatrix::zeros(n, width);
            for i in 0..n {
                for c in 0..width {
                    e[(i, c)] = StandardNormal.sample(&mut rng);
                }
            }
            e
        }
        SamplerMode::Rqmc => {
            let mut engine = SobolEngine::new(width, scramble_seed_for(seed))?;
            let mut u = engine.draw(n);
            u.iter_mut().for_each(|v| *v = inv_norm_unchecked(*v));
            u
        }
    };
    Ok(BaseSampleSet { e, mode, seed })
}

/// `ξ^i = μ + L ε^i` for each row of `e` (N×q); returns N×q.
pub fn reparameterize(posterior: &GaussianPosterior, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = posterior.q();
    if e.ncols() != q {
        return Err(Error::BaseSampleShape {
            required: q,
            available: e.ncols(),
        });
    }
    let l = root_decomposition(&posterior.cov)?;
    let mut xi = e * l.transpose();
    for mut row in xi.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(posterior.mean.iter()) {
            *v += m;
        }
    }
    Ok(xi)
}

/// Per-output samples for a list of independent posteriors sharing `base`.
pub fn reparameterize_list(posteriors: &[GaussianPosterior], base: &BaseSampleSet) -> Result<Vec<DMatrix<f64>>> {
    let m = posteriors.len();
    posteriors
        .iter()
        .enumerate()
        .map(|(j, p)| reparameterize(p, &base.output_block(p.q(), m, j)?))
        .collect()
}

/// Geometric sample-size schedule `{m·b^k : 1 ≤ m ≤ M, 0 ≤ k ≤ k_max}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSizeSchedule {
    pub base: usize,
    pub max_multiplier: usize,
    pub k_max: u32,
}

pub fn qmc_sample_sizes(schedule: &SampleSizeSchedule) -> Result<Vec<usize>> {
    if schedule.base < 2 || schedule.max_multiplier < 1 {
        return Err(Error::Domain("schedule needs base >= 2 and M >= 1".into()));
    }
    let mut out = Vec::new();
    for m in 1..=schedule.max_multiplier {
        for k in 0..=schedule.k_max {
            let v = schedule
                .base
                .checked_pow(k)
                .and_then(|p| p.checked_mul(m))
                .ok_or_else(|| Error::Domain("schedule overflows".into()))?;
            out.push(v);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
