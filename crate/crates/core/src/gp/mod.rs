//! Exact Gaussian-process regression.

mod fit;
pub mod io;
pub(crate) mod kernel;
mod lml;
mod model;
pub(crate) mod tape;

pub use fit::{fit_mle, fit_model_list, FitConfig};
pub use io::{read_dataset_csv, write_dataset_csv, ModelDocument};
pub use kernel::kernel_eval;
pub use lml::{log_marginal_likelihood, params_to_theta, theta_to_params};
pub use model::{Dataset, GaussianPosterior, GpModel, KernelParams, ModelList, PosteriorJacobian};
