use nalgebra::{DMatrix, DVector};

use crate::acquisition::AcquisitionValue;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::sampling::{norm_cdf, norm_pdf};

const SIGMA_FLOOR: f64 = 1e-12;

/// `E[(f - best_f)⁺]` for `f ~ N(mu, sigma²)`.
pub fn expected_improvement_closed_form(mu: f64, sigma: f64, best_f: f64) -> f64 {
    if sigma < SIGMA_FLOOR {
        return (mu - best_f).max(0.0);
    }
    let z = (mu - best_f) / sigma;
    sigma * (z * norm_cdf(z) + norm_pdf(z))
}

/// Closed-form expected improvement at a single point.
pub fn analytic_ei(model: &GpModel, x: &DMatrix<f64>, best_f: f64) -> Result<AcquisitionValue> {
    model.check_points(x)?;
    if x.nrows() != 1 {
        return Err(Error::Acquisition("analytic EI takes one point".into()));
    }
    let b = model.block(x);
    let mu = model.block_mean(&b)[0];
    let var = model.block_var(&b)[0].max(0.0);
    let sigma = var.sqrt();
    if sigma < SIGMA_FLOOR {
        return Ok(AcquisitionValue {
            value: (mu - best_f).max(0.0),
            grad: DMatrix::zeros(1, x.ncols()),
        });
    }
    let z = (mu - best_f) / sigma;
    let cdf = norm_cdf(z);
    let pdf = norm_pdf(z);
    let value = sigma * (z * cdf + pdf);
    let mut g = model.block_grad(&b);
    model.block_mean_backward(&DVector::from_element(1, cdf), &mut g);
    model.block_var_backward(&b, &DVector::from_element(1, pdf / (2.0 * sigma)), &mut g);
    let grad = model.block_finish(&b, g);
    Ok(AcquisitionValue { value, grad })
}
