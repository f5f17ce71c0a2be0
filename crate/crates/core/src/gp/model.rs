use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::kernel::Matern52;
use crate::linalg::{self, cholesky_jittered, root_decomposition, JITTER_MAX};

/// Observed inputs and outputs, with optional per-observation noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    noise_var: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, noise_var: Option<DMatrix<f64>>) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::Shape("inputs need at least one column".into()));
        }
        if y.ncols() == 0 {
            return Err(Error::Shape("outputs need at least one column".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Shape(format!(
                "x has {} rows but y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if let Some(nv) = &noise_var {
            if nv.nrows() != y.nrows() || nv.ncols() != y.ncols() {
                return Err(Error::Shape(format!(
                    "noise_var is {}x{} but y is {}x{}",
                    nv.nrows(),
                    nv.ncols(),
                    y.nrows(),
                    y.ncols()
                )));
            }
            if nv.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Domain("noise variances must be >= 0".into()));
            }
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset contains non-finite values".into()));
        }
        Ok(Dataset { x, y, noise_var })
    }

    /// Single-output convenience constructor.
    pub fn single(x: DMatrix<f64>, y: DVector<f64>, noise_var: Option<DVector<f64>>) -> Result<Self> {
        let n = y.len();
        let y = DMatrix::from_column_slice(n, 1, y.as_slice());
        let nv = noise_var.map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
        Dataset::new(x, y, nv)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
    pub fn noise_var(&self) -> Option<&DMatrix<f64>> {
        self.noise_var.as_ref()
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn d(&self) -> usize {
        self.x.ncols()
    }
    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    /// Output column `j` and its noise variances.
    pub fn output(&self, j: usize) -> (DVector<f64>, Option<DVector<f64>>) {
        let y = DVector::from_column_slice(self.y.column(j).as_slice());
        let nv = self
            .noise_var
            .as_ref()
            .map(|nv| DVector::from_column_slice(nv.column(j).as_slice()));
        (y, nv)
    }

    /// Restriction to a single output column.
    pub fn output_dataset(&self, j: usize) -> Dataset {
        let (y, nv) = self.output(j);
        Dataset::single(self.x.clone(), y, nv).expect("slice of a valid dataset")
    }

    /// Appends rows.
    pub fn append(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, noise_var: Option<&DMatrix<f64>>) -> Result<Dataset> {
        if x.ncols() != self.d() || y.ncols() != self.m() || x.nrows() != y.nrows() {
            return Err(Error::Shape("appended rows do not match the dataset".into()));
        }
        let n = self.n();
        let k = x.nrows();
        let mut nx = DMatrix::zeros(n + k, self.d());
        nx.rows_mut(0, n).copy_from(&self.x);
        nx.rows_mut(n, k).copy_from(x);
        let mut ny = DMatrix::zeros(n + k, self.m());
        ny.rows_mut(0, n).copy_from(&self.y);
        ny.rows_mut(n, k).copy_from(y);
        let nv = match (&self.noise_var, noise_var) {
            (None, None) => None,
            (Some(a), Some(b)) => {
                let mut nv = DMatrix::zeros(n + k, self.m());
                nv.rows_mut(0, n).copy_from(a);
                nv.rows_mut(n, k).copy_from(b);
                Some(nv)
            }
            _ => return Err(Error::Shape("noise_var presence must match".into())),
        };
        Dataset::new(nx, ny, nv)
    }
}

/// Matérn-5/2 ARD hyperparameters plus constant mean and homoskedastic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub outputscale: f64,
    pub mean_const: f64,
    pub noise_var_hom: f64,
}

impl KernelParams {
    pub fn new(d: usize) -> Self {
        KernelParams {
            lengthscales: vec![1.0; d],
            outputscale: 1.0,
            mean_const: 0.0,
            noise_var_hom: 1e-4,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.lengthscales.len() != d {
            return Err(Error::Shape(format!(
                "{} lengthscales for {} input dimensions",
                self.lengthscales.len(),
                d
            )));
        }
        let positive = self
            .lengthscales
            .iter()
            .chain([&self.outputscale, &self.noise_var_hom])
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive || !self.mean_const.is_finite() {
            return Err(Error::Domain("kernel hyperparameters must be finite and positive".into()));
        }
        Ok(())
    }
}

/// Joint Gaussian posterior at a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub includes_observation_noise: bool,
}

impl GaussianPosterior {
    pub fn q(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Exact single-output GP regression model.
///
/// Immutable after construction. Fantasy models created by
/// [`GpModel::fantasize`] share the training factor through an `Arc`.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub(crate) train_x: Arc<DMatrix<f64>>,
    pub(crate) train_y: DVector<f64>,
    pub(crate) train_noise: DVector<f64>,
    pub(crate) fixed_noise: bool,
    pub(crate) params: KernelParams,
    pub(crate) kernel: Matern52,
    pub(crate) chol: Arc<DMatrix<f64>>,
    pub(crate) jitter: f64,
    pub(crate) alpha: DVector<f64>,
}

impl GpModel {
    /// Conditions the GP prior on `(x, y)` with fixed hyperparameters.
    ///
    /// `noise_var` gives per-point noise variances; `None` uses
    /// `params.noise_var_hom` for every point.
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        noise_var: Option<DVector<f64>>,
        params: KernelParams,
    ) -> Result<Self> {
        params.validate(x.ncols())?;
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::Shape(format!("x has {n} rows but y has {}", y.len())));
        }
        let fixed_noise = noise_var.is_some();
        let train_noise = match noise_var {
            Some(nv) => {
                if nv.len() != n {
                    return Err(Error::Shape("noise_var length differs from n".into()));
                }
                if nv.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::Domain("noise variances must be >= 0".into()));
                }
                nv
            }
            None => DVector::from_element(n, params.noise_var_hom),
        };
        let kernel = Matern52::new(&params);
        let mut k = kernel.matrix(&x, &x);
        for i in 0..n {
            k[(i, i)] += train_noise[i];
        }
        let mean_diag = if n > 0 { k.diagonal().sum() / n as f64 } else { 0.0 };
        let (chol, jitter) = cholesky_jittered(&k).ok_or(Error::SingularKernel {
            max_jitter: JITTER_MAX * mean_diag,
        })?;
        let resid = y.add_scalar(-params.mean_const);
        let alpha = linalg::solve_lower_transpose_vec(&chol, &linalg::solve_lower_vec(&chol, &resid));
        Ok(GpModel {
            train_x: Arc::new(x),
            train_y: y,
            train_noise,
            fixed_noise,
            params,
            kernel,
            chol: Arc::new(chol),
            jitter,
            alpha,
        })
    }

    /// Builds from a single-output dataset.
    pub fn from_dataset(dataset: &Dataset, params: KernelParams) -> Result<Self> {
        if dataset.m() != 1 {
            return Err(Error::Shape(format!(
                "GpModel is single-output; dataset has {} outputs",
                dataset.m()
            )));
        }
        let (y, nv) = dataset.output(0);
        GpModel::new(dataset.x().clone(), y, nv, params)
    }

    /// Prior-only model (n = 0).
    pub fn prior(d: usize, params: KernelParams) -> Result<Self> {
        GpModel::new(DMatrix::zeros(0, d), DVector::zeros(0), None, params)
    }

    pub fn n(&self) -> usize {
        self.train_x.nrows()
    }
    pub fn d(&self) -> usize {
        self.train_x.ncols()
    }
    pub fn params(&self) -> &KernelParams {
        &self.params
    }
    pub fn train_x(&self) -> &DMatrix<f64> {
        &self.train_x
    }
    pub fn train_y(&self) -> &DVector<f64> {
        &self.train_y
    }
    pub fn train_noise(&self) -> &DVector<f64> {
        &self.train_noise
    }
    pub fn has_fixed_noise(&self) -> bool {
        self.fixed_noise
    }
    /// Lower Cholesky factor of `K(X, X) + diag(noise) + jitter I`.
    pub fn chol_train(&self) -> &DMatrix<f64> {
        &self.chol
    }
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dataset(&self) -> Dataset {
        let nv = self.fixed_noise.then(|| self.train_noise.clone());
        Dataset::single((*self.train_x).clone(), self.train_y.clone(), nv).expect("model data is valid")
    }

    /// Noise variance assumed for a new observation: the homoskedastic
    /// parameter, or the mean observed noise for fixed-noise models.
    pub fn noise_at_new(&self) -> f64 {
        if self.fixed_noise {
            if self.n() == 0 {
                0.0
            } else {
                self.train_noise.mean()
            }
        } else {
            self.params.noise_var_hom
        }
    }

    pub(crate) fn check_points(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.d() {
            return Err(Error::Shape(format!(
                "points have {} columns, model expects {}",
                x.ncols(),
                self.d()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("candidate points".into()));
        }
        Ok(())
    }

    /// Posterior of `f(X)` (or `y(X)` when `observation_noise` is set).
    pub fn posterior(&self, x: &DMatrix<f64>, observation_noise: bool) -> Result<GaussianPosterior> {
        self.check_points(x)?;
        if x.nrows() == 0 {
            return Err(Error::Shape("need at least one candidate point".into()));
        }
        let b = self.block(x);
        let mean = self.block_mean(&b);
        let mut cov = self.block_cov_self(&b);
        if observation_noise {
            let nv = self.noise_at_new();
            for i in 0..cov.nrows() {
                cov[(i, i)] += nv;
            }
        }
        Ok(GaussianPosterior {
            mean,
            cov,
            includes_observation_noise: observation_noise,
        })
    }

    /// Posterior mean only.
    pub fn posterior_mean(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_points(x)?;
        Ok(self.block_mean(&self.block(x)))
    }

    /// Posterior marginal variances only.
    pub fn posterior_variance(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_points(x)?;
        Ok(self.block_var(&self.block(x)))
    }

    /// Posterior together with exact derivatives of the mean and of the
    /// lower root factor with respect to every candidate coordinate.
    pub fn posterior_with_grad(&self, x: &DMatrix<f64>) -> Result<(GaussianPosterior, PosteriorJacobian)> {
        self.check_points(x)?;
        let q = x.nrows();
        let d = x.ncols();
        let b = self.block(x);
        let mean = self.block_mean(&b);
        let cov = self.block_cov_self(&b);
        let root = root_decomposition(&cov)?;
        let mut jac = PosteriorJacobian {
            q,
            d,
            mean: vec![0.0; q * q * d],
            root: vec![0.0; q * q * q * d],
        };
        for r in 0..q {
            let mut mbar = DVector::zeros(q);
            mbar[r] = 1.0;
            let mut g = self.block_grad(&b);
            self.block_mean_backward(&mbar, &mut g);
            let zbar = self.block_finish(&b, g);
            for a in 0..q {
                for k in 0..d {
                    jac.mean[(r * q + a) * d + k] = zbar[(a, k)];
                }
            }
        }
        for r in 0..q {
            for c in 0..=r {
                let mut lbar = DMatrix::zeros(q, q);
                lbar[(r, c)] = 1.0;
                let sbar = linalg::cholesky_backward(&root, &lbar);
                let mut g = self.block_grad(&b);
                self.block_cov_self_backward(&b, &sbar, &mut g);
                let zbar = self.block_finish(&b, g);
                for a in 0..q {
                    for k in 0..d {
                        jac.root[((r * q + c) * q + a) * d + k] = zbar[(a, k)];
                    }
                }
            }
        }
        Ok((
            GaussianPosterior {
                mean,
                cov,
                includes_observation_noise: false,
            },
            jac,
        ))
    }

    /// Fantasy models conditioned on `y^i = μ(X) + Lσ(X) ε^i`, one per row
    /// of `base_samples` (N×q). Hyperparameters are frozen and the extended
    /// training factor is shared between all fantasies.
    pub fn fantasize(&self, x: &DMatrix<f64>, base_samples: &DMatrix<f64>) -> Result<Vec<GpModel>> {
        self.check_points(x)?;
        let q = x.nrows();
        if base_samples.ncols() != q {
            return Err(Error::Shape(format!(
                "base samples have {} columns for {} fantasy points",
                base_samples.ncols(),
                q
            )));
        }
        let n = self.n();
        let b = self.block(x);
        let mean = self.block_mean(&b);
        let noise = self.noise_at_new();
        let mut cov = self.block_cov_self(&b);
        for i in 0..q {
            cov[(i, i)] += noise;
        }
        let lsig = root_decomposition(&cov)?;

        let mut chol = DMatrix::zeros(n + q, n + q);
        chol.view_mut((0, 0), (n, n)).copy_from(&*self.chol);
        chol.view_mut((n, 0), (q, n)).copy_from(&b.v.transpose());
        chol.view_mut((n, n), (q, q)).copy_from(&lsig);
        let chol = Arc::new(chol);

        let mut train_x = DMatrix::zeros(n + q, self.d());
        train_x.rows_mut(0, n).copy_from(&*self.train_x);
        train_x.rows_mut(n, q).copy_from(x);
        let train_x = Arc::new(train_x);
        let mut train_noise = DVector::zeros(n + q);
        train_noise.rows_mut(0, n).copy_from(&self.train_noise);
        train_noise.rows_mut(n, q).fill(noise);

        let mut out = Vec::with_capacity(base_samples.nrows());
        for row in base_samples.row_iter() {
            let eps = DVector::from_iterator(q, row.iter().copied());
            let y_new = &mean + &lsig * eps;
            let mut y = DVector::zeros(n + q);
            y.rows_mut(0, n).copy_from(&self.train_y);
            y.rows_mut(n, q).copy_from(&y_new);
            let resid = y.add_scalar(-self.params.mean_const);
            let alpha = linalg::solve_lower_transpose_vec(&chol, &linalg::solve_lower_vec(&chol, &resid));
            out.push(GpModel {
                train_x: Arc::clone(&train_x),
                train_y: y,
                train_noise: train_noise.clone(),
                fixed_noise: self.fixed_noise,
                params: self.params.clone(),
                kernel: self.kernel.clone(),
                chol: Arc::clone(&chol),
                jitter: self.jitter,
                alpha,
            });
        }
        Ok(out)
    }
}

/// Derivatives returned by [`GpModel::posterior_with_grad`].
///
/// `mean_grad(r, a, k) = ∂μ_r / ∂X[a, k]` and
/// `root_grad(r, c, a, k) = ∂L[r, c] / ∂X[a, k]`.
#[derive(Debug, Clone)]
pub struct PosteriorJacobian {
    q: usize,
    d: usize,
    mean: Vec<f64>,
    root: Vec<f64>,
}

impl PosteriorJacobian {
    pub fn mean_grad(&self, r: usize, a: usize, k: usize) -> f64 {
        self.mean[(r * self.q + a) * self.d + k]
    }
    pub fn root_grad(&self, r: usize, c: usize, a: usize, k: usize) -> f64 {
        self.root[((r * self.q + c) * self.q + a) * self.d + k]
    }
}

/// Independent single-output models sharing the same training inputs.
#[derive(Debug, Clone)]
pub struct ModelList {
    models: Vec<GpModel>,
}

impl ModelList {
    pub fn new(models: Vec<GpModel>) -> Result<Self> {
        let Some(first) = models.first() else {
            return Err(Error::Shape("model list needs at least one model".into()));
        };
        for m in &models[1..] {
            if m.d() != first.d() || m.train_x() != first.train_x() {
                return Err(Error::Shape("all models in a list must share training inputs".into()));
            }
        }
        Ok(ModelList { models })
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }
    pub fn num_outputs(&self) -> usize {
        self.models.len()
    }
    pub fn d(&self) -> usize {
        self.models[0].d()
    }
    pub fn train_x(&self) -> &DMatrix<f64> {
        self.models[0].train_x()
    }

    /// Per-output posteriors; the joint across outputs is block diagonal.
    pub fn posterior(&self, x: &DMatrix<f64>, observation_noise: bool) -> Result<Vec<GaussianPosterior>> {
        self.models.iter().map(|m| m.posterior(x, observation_noise)).collect()
    }
}

impl From<GpModel> for ModelList {
    fn from(m: GpModel) -> Self {
        ModelList { models: vec![m] }
    }
}
