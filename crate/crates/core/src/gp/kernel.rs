//! Matérn-5/2 covariance with ARD lengthscales.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp::KernelParams;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Borrowed view of the kernel hyperparameters with precomputed inverse
/// squared lengthscales.
#[derive(Debug, Clone)]
pub(crate) struct Matern52 {
    pub inv_ls2: Vec<f64>,
    pub outputscale: f64,
}

impl Matern52 {
    pub fn new(params: &KernelParams) -> Self {
        Matern52 {
            inv_ls2: params.lengthscales.iter().map(|l| 1.0 / (l * l)).collect(),
            outputscale: params.outputscale,
        }
    }

    #[inline]
    fn r2_rows(&self, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
        let mut r2 = 0.0;
        for (k, w) in self.inv_ls2.iter().enumerate() {
            let diff = a[(i, k)] - b[(j, k)];
            r2 += diff * diff * w;
        }
        r2
    }

    /// Value as a function of the scaled distance.
    #[inline]
    pub fn of_r(&self, r: f64) -> f64 {
        let sr = SQRT5 * r;
        self.outputscale * (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
    }

    /// `-(1/r) dk/dr`, finite at r = 0.
    #[inline]
    pub fn neg_dk_over_r(&self, r: f64) -> f64 {
        let sr = SQRT5 * r;
        self.outputscale * (5.0 / 3.0) * (1.0 + sr) * (-sr).exp()
    }

    pub fn eval_rows(&self, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
        self.of_r(self.r2_rows(a, i, b, j).sqrt())
    }

    /// `k(A, B)` for row-point matrices.
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(a.nrows(), b.nrows());
        for j in 0..b.nrows() {
            for i in 0..a.nrows() {
                k[(i, j)] = self.eval_rows(a, i, b, j);
            }
        }
        k
    }

    /// Accumulates `weight * ∂k(a_i, b_j)/∂a_i` into `out` (length d).
    #[inline]
    pub fn grad_first_rows(
        &self,
        a: &DMatrix<f64>,
        i: usize,
        b: &DMatrix<f64>,
        j: usize,
        weight: f64,
        out: &mut [f64],
    ) {
        if weight == 0.0 {
            return;
        }
        let r = self.r2_rows(a, i, b, j).sqrt();
        let c = -self.neg_dk_over_r(r) * weight;
        for (k, w) in self.inv_ls2.iter().enumerate() {
            out[k] += c * (a[(i, k)] - b[(j, k)]) * w;
        }
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} contains non-finite values")))
    }
}

/// Matérn-5/2 ARD covariance `outputscale * k(r)` between two points.
pub fn kernel_eval(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    params.validate(x1.len())?;
    if x2.len() != x1.len() {
        return Err(Error::Shape(format!(
            "points have dimensions {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    check_finite(x1, "x1")?;
    check_finite(x2, "x2")?;
    let r2: f64 = x1
        .iter()
        .zip(x2)
        .zip(&params.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    Ok(Matern52::new(params).of_r(r2.sqrt()))
}
