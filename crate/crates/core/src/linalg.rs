//! Dense linear-algebra kernels shared by the GP and acquisition code.
//!
//! Matrices are nalgebra `DMatrix` (column-major). The triangular solvers
//! treat an exactly-zero pivot as a zero row so that degenerate (zero
//! variance) posteriors propagate zeros instead of NaNs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// First jitter level, relative to the mean diagonal.
pub const JITTER_START: f64 = 1e-8;
/// Last jitter level tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Plain Cholesky factorization; `None` if a pivot is not strictly positive.
pub fn cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = a.lower_triangle();
    for k in 0..n {
        let pivot = l[(k, k)];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        let root = pivot.sqrt();
        l[(k, k)] = root;
        for i in k + 1..n {
            l[(i, k)] /= root;
        }
        for j in k + 1..n {
            let ljk = l[(j, k)];
            if ljk == 0.0 {
                continue;
            }
            for i in j..n {
                let lik = l[(i, k)];
                l[(i, j)] -= lik * ljk;
            }
        }
    }
    Some(l)
}

/// Cholesky with adaptive diagonal jitter.
///
/// The unjittered factorization is tried first; on failure the jitter starts
/// at `1e-8 * mean(diag)` and grows by decades up to `1e-4 * mean(diag)`.
/// Returns the factor and the jitter that was added (0 when none).
/// A matrix whose diagonal is identically zero is factored as the zero matrix.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Some((DMatrix::zeros(0, 0), 0.0));
    }
    cholesky_jittered_scaled(a, a.diagonal().mean())
}

/// Like [`cholesky_jittered`] with jitter measured against `mean_diag`
/// instead of the diagonal of `a` (for Schur complements that may vanish).
pub fn cholesky_jittered_scaled(a: &DMatrix<f64>, mean_diag: f64) -> Option<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Some((DMatrix::zeros(0, 0), 0.0));
    }
    if let Some(l) = cholesky(a) {
        return Some((l, 0.0));
    }
    if mean_diag == 0.0 && a.iter().all(|v| v.abs() == 0.0) {
        return Some((DMatrix::zeros(n, n), 0.0));
    }
    if !mean_diag.is_finite() || mean_diag < 0.0 {
        return None;
    }
    let mut level = JITTER_START;
    while level <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = level * mean_diag;
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(l) = cholesky(&b) {
            return Some((l, jitter));
        }
        level *= 10.0;
    }
    None
}

/// Cholesky that zeroes columns whose pivot is within `tol` of zero.
fn cholesky_semidefinite(a: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let off_tol = (tol * a.diagonal().amax()).sqrt();
    let mut l = a.lower_triangle();
    for k in 0..n {
        let pivot = l[(k, k)];
        if !pivot.is_finite() || pivot < -tol {
            return None;
        }
        if pivot <= tol {
            for i in k..n {
                if i > k && l[(i, k)].abs() > off_tol {
                    return None;
                }
                l[(i, k)] = 0.0;
            }
            continue;
        }
        let root = pivot.sqrt();
        l[(k, k)] = root;
        for i in k + 1..n {
            l[(i, k)] /= root;
        }
        for j in k + 1..n {
            let ljk = l[(j, k)];
            for i in j..n {
                let lik = l[(i, k)];
                l[(i, j)] -= lik * ljk;
            }
        }
    }
    Some(l)
}

/// Root of `cov` with jitter relative to `scale`. Exactly singular
/// directions (pivots below `1e-10·scale`) get a zero column instead of jitter.
pub fn root_decomposition_scaled(cov: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    if scale > 0.0 {
        if let Some(l) = cholesky_semidefinite(cov, 1e-10 * scale) {
            return Ok(l);
        }
    }
    cholesky_jittered_scaled(cov, scale)
        .map(|(l, _)| l)
        .ok_or(Error::NotPsd {
            max_jitter: JITTER_MAX * scale,
        })
}

/// Lower-triangular root `L` with `L Lᵀ = cov` (up to jitter).
pub fn root_decomposition(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.nrows() != cov.ncols() {
        return Err(Error::Shape(format!(
            "covariance must be square, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let mean_diag = if cov.nrows() > 0 {
        cov.diagonal().iter().sum::<f64>() / cov.nrows() as f64
    } else {
        0.0
    };
    cholesky_jittered(cov).map(|(l, _)| l).ok_or(Error::NotPsd {
        max_jitter: JITTER_MAX * mean_diag,
    })
}

/// Solves `L X = B` in place for lower-triangular `L`.
pub fn solve_lower_mut(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    debug_assert_eq!(b.nrows(), n);
    for c in 0..b.ncols() {
        let mut col = b.column_mut(c);
        for k in 0..n {
            let pivot = l[(k, k)];
            if pivot == 0.0 {
                col[k] = 0.0;
                continue;
            }
            let xk = col[k] / pivot;
            col[k] = xk;
            if xk != 0.0 {
                for i in k + 1..n {
                    col[i] -= l[(i, k)] * xk;
                }
            }
        }
    }
}

/// Solves `Lᵀ X = B` in place for lower-triangular `L`.
pub fn solve_lower_transpose_mut(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    debug_assert_eq!(b.nrows(), n);
    for c in 0..b.ncols() {
        let mut col = b.column_mut(c);
        for i in (0..n).rev() {
            let pivot = l[(i, i)];
            if pivot == 0.0 {
                col[i] = 0.0;
                continue;
            }
            let mut acc = col[i];
            for k in i + 1..n {
                acc -= l[(k, i)] * col[k];
            }
            col[i] = acc / pivot;
        }
    }
}

pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    solve_lower_mut(l, &mut x);
    x
}

pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = b.clone();
    solve_lower_transpose_mut(l, &mut x);
    x
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    solve_lower_mut(l, &mut x);
    DVector::from_column_slice(x.as_slice())
}

pub fn solve_lower_transpose_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    solve_lower_transpose_mut(l, &mut x);
    DVector::from_column_slice(x.as_slice())
}

/// Reverse-mode adjoint of the Cholesky factorization.
///
/// Given `L = chol(S)` and the adjoint `L̄` of the lower factor, returns the
/// symmetric adjoint `S̄` such that `<S̄, dS> = <L̄, dL>` for symmetric `dS`.
/// Rows with a zero pivot contribute nothing.
pub fn cholesky_backward(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Φ(Lᵀ L̄): lower triangle with halved diagonal.
    let mut phi = l.transpose() * l_bar.lower_triangle();
    for j in 0..n {
        for i in 0..j {
            phi[(i, j)] = 0.0;
        }
        phi[(j, j)] *= 0.5;
    }
    // G = L⁻ᵀ Φ L⁻¹
    solve_lower_transpose_mut(l, &mut phi);
    let mut gt = phi.transpose();
    solve_lower_transpose_mut(l, &mut gt);
    let g = gt.transpose();
    (&g + &gt) * 0.5
}

/// Frobenius norm of `a - b` relative to the Frobenius norm of `b`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm();
    let num = (a - b).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}
