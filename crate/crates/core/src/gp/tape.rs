//! Posterior building blocks with hand-written reverse-mode adjoints.
//!
//! A [`Block`] caches `k(X_train, Z)` and `V = L⁻¹ k(X_train, Z)` for a set of
//! query rows `Z`. Means and covariances between blocks are then cheap, and
//! their adjoints are accumulated into a [`BlockGrad`] that
//! [`GpModel::block_finish`] turns into a gradient with respect to `Z`.

use nalgebra::{DMatrix, DVector};

use crate::gp::GpModel;
use crate::linalg;

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub z: DMatrix<f64>,
    pub kxz: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockGrad {
    pub v: DMatrix<f64>,
    pub kxz: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl GpModel {
    pub(crate) fn block(&self, z: &DMatrix<f64>) -> Block {
        let kxz = self.kernel.matrix(&self.train_x, z);
        let v = linalg::solve_lower(&self.chol, &kxz);
        Block { z: z.clone(), kxz, v }
    }

    pub(crate) fn block_grad(&self, b: &Block) -> BlockGrad {
        let n = self.n();
        let p = b.len();
        BlockGrad {
            v: DMatrix::zeros(n, p),
            kxz: DMatrix::zeros(n, p),
            z: DMatrix::zeros(p, self.d()),
        }
    }

    pub(crate) fn block_mean(&self, b: &Block) -> DVector<f64> {
        let mut m = b.kxz.tr_mul(&self.alpha);
        m.add_scalar_mut(self.params.mean_const);
        m
    }

    pub(crate) fn block_mean_backward(&self, mbar: &DVector<f64>, g: &mut BlockGrad) {
        g.kxz.ger(1.0, &self.alpha, mbar, 1.0);
    }

    pub(crate) fn block_cov(&self, a: &Block, b: &Block) -> DMatrix<f64> {
        let mut c = self.kernel.matrix(&a.z, &b.z);
        c.gemm_tr(-1.0, &a.v, &b.v, 1.0);
        c
    }

    pub(crate) fn block_cov_self(&self, b: &Block) -> DMatrix<f64> {
        let mut c = self.block_cov(b, b);
        let p = c.nrows();
        for j in 0..p {
            for i in j + 1..p {
                let s = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = s;
                c[(j, i)] = s;
            }
        }
        c
    }

    pub(crate) fn block_var(&self, b: &Block) -> DVector<f64> {
        let s = self.params.outputscale;
        DVector::from_iterator(b.len(), b.v.column_iter().map(|c| s - c.norm_squared()))
    }

    /// Adjoint of `block_cov(a, b)` for two distinct blocks; `gb = None`
    /// treats `b` as constant.
    pub(crate) fn block_cov_backward(
        &self,
        a: &Block,
        b: &Block,
        sbar: &DMatrix<f64>,
        ga: &mut BlockGrad,
        mut gb: Option<&mut BlockGrad>,
    ) {
        ga.v.gemm(-1.0, &b.v, &sbar.transpose(), 1.0);
        if let Some(gb) = gb.as_deref_mut() {
            gb.v.gemm(-1.0, &a.v, sbar, 1.0);
        }
        let d = self.d();
        let mut tmp = vec![0.0; d];
        for j in 0..b.len() {
            for i in 0..a.len() {
                let w = sbar[(i, j)];
                if w == 0.0 {
                    continue;
                }
                tmp.iter_mut().for_each(|t| *t = 0.0);
                self.kernel.grad_first_rows(&a.z, i, &b.z, j, w, &mut tmp);
                for k in 0..d {
                    ga.z[(i, k)] += tmp[k];
                }
                if let Some(gb) = gb.as_deref_mut() {
                    for k in 0..d {
                        gb.z[(j, k)] -= tmp[k];
                    }
                }
            }
        }
    }

    /// Adjoint of `block_cov_self(b)`.
    pub(crate) fn block_cov_self_backward(&self, b: &Block, sbar: &DMatrix<f64>, g: &mut BlockGrad) {
        let sym = sbar + sbar.transpose();
        g.v.gemm(-1.0, &b.v, &sym, 1.0);
        let d = self.d();
        let mut tmp = vec![0.0; d];
        for j in 0..b.len() {
            for i in 0..b.len() {
                let w = sbar[(i, j)];
                if w == 0.0 || i == j {
                    continue;
                }
                tmp.iter_mut().for_each(|t| *t = 0.0);
                self.kernel.grad_first_rows(&b.z, i, &b.z, j, w, &mut tmp);
                for k in 0..d {
                    g.z[(i, k)] += tmp[k];
                    g.z[(j, k)] -= tmp[k];
                }
            }
        }
    }

    pub(crate) fn block_var_backward(&self, b: &Block, varbar: &DVector<f64>, g: &mut BlockGrad) {
        for j in 0..b.len() {
            let w = -2.0 * varbar[j];
            if w != 0.0 {
                let mut col = g.v.column_mut(j);
                col.axpy(w, &b.v.column(j), 1.0);
            }
        }
    }

    /// Pushes the accumulated adjoints through `V = L⁻¹ K_xz` and the kernel,
    /// returning `∂/∂Z`.
    pub(crate) fn block_finish(&self, b: &Block, mut g: BlockGrad) -> DMatrix<f64> {
        if self.n() > 0 && g.v.iter().any(|v| *v != 0.0) {
            linalg::solve_lower_transpose_mut(&self.chol, &mut g.v);
            g.kxz += &g.v;
        }
        let d = self.d();
        let mut tmp = vec![0.0; d];
        for j in 0..b.len() {
            tmp.iter_mut().for_each(|t| *t = 0.0);
            for i in 0..self.n() {
                self.kernel
                    .grad_first_rows(&b.z, j, &self.train_x, i, g.kxz[(i, j)], &mut tmp);
            }
            for k in 0..d {
                g.z[(j, k)] += tmp[k];
            }
        }
        g.z
    }
}
