//! C ABI over the saabo engine.
//!
//! Every entry point returns a [`SaaboStatus`]; on failure the message is
//! available from [`saabo_last_error_message`] until the next call on the
//! same thread. Handles are opaque and released with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use saabo::acquisition::AcquisitionKind;
use saabo::gp::{fit_mle, Dataset, FitConfig, GpModel, ModelDocument, ModelList};
use saabo::optimize::OptimizeConfig;
use saabo::suggest::{suggest, SuggestRequest};
use saabo::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaaboStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Optimization = 5,
    Io = 6,
    Panic = 7,
}

/// Fitted GP model.
pub struct SaaboModel {
    model: GpModel,
    bounds: Vec<(f64, f64)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SaaboStatus {
    match e {
        Error::Config(_) | Error::Json(_) => SaaboStatus::Config,
        Error::Shape(_) | Error::Domain(_) | Error::NonFinite(_) | Error::OutOfBounds(_) => SaaboStatus::InvalidArgument,
        Error::Optimization(_) | Error::FitFailed { .. } => SaaboStatus::Optimization,
        Error::Io(_) | Error::Csv(_) => SaaboStatus::Io,
        _ => SaaboStatus::Numerical,
    }
}

struct Fail(SaaboStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> SaaboStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaaboStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside saabo".into());
            SaaboStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SaaboStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SaaboStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn data_bounds(x: &DMatrix<f64>) -> Vec<(f64, f64)> {
    x.column_iter()
        .map(|c| {
            let (lo, hi) = (c.min(), c.max());
            if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) }
        })
        .collect()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next saabo call on the same thread.
#[no_mangle]
pub extern "C" fn saabo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fits a GP by maximum likelihood to row-major `x` (n by d) and `y` (n).
///
/// # Safety
/// `x` must hold `n * d` doubles, `y` must hold `n`, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn saabo_model_fit(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    seed: u64,
    out: *mut *mut SaaboModel,
) -> SaaboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if n == 0 || d == 0 {
            return Err(Fail(SaaboStatus::InvalidArgument, "n and d must be positive".into()));
        }
        let xs = slice(x, n * d, "x")?;
        let ys = slice(y, n, "y")?;
        let xm = DMatrix::from_row_slice(n, d, xs);
        let bounds = data_bounds(&xm);
        let data = Dataset::single(xm, DVector::from_column_slice(ys), None)?;
        let cfg = FitConfig {
            seed,
            input_bounds: Some(bounds.clone()),
            ..FitConfig::default()
        };
        let model = fit_mle(&data, &cfg)?;
        *out = Box::into_raw(Box::new(SaaboModel { model, bounds }));
        Ok(())
    })
}

/// Loads a model document written by `saabo fit`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn saabo_model_from_json(json: *const c_char, out: *mut *mut SaaboModel) -> SaaboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let doc = ModelDocument::from_json(str_arg(json, "json")?)?;
        let model = doc.to_model()?;
        let bounds = doc.bounds.clone().unwrap_or_else(|| vec![(0.0, 1.0); model.d()]);
        *out = Box::into_raw(Box::new(SaaboModel { model, bounds }));
        Ok(())
    })
}

/// Serializes the model; free the string with [`saabo_string_free`].
///
/// # Safety
/// `model` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn saabo_model_to_json(model: *const SaaboModel, out: *mut *mut c_char) -> SaaboStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let s = ModelDocument::from_model(&m.model, Some(m.bounds.clone())).to_json()?;
        *out = CString::new(s)
            .map_err(|_| Fail(SaaboStatus::Numerical, "interior NUL in model document".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn saabo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Input dimension of the model, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn saabo_model_dim(model: *const SaaboModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.d())
}

/// Replaces the search box used by [`saabo_suggest`].
///
/// # Safety
/// `lower` and `upper` must hold `d` doubles each.
#[no_mangle]
pub unsafe extern "C" fn saabo_model_set_bounds(
    model: *mut SaaboModel,
    lower: *const f64,
    upper: *const f64,
    d: usize,
) -> SaaboStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        if d != m.model.d() {
            return Err(Fail(SaaboStatus::InvalidArgument, format!("model has {} inputs, got {d}", m.model.d())));
        }
        let lo = slice(lower, d, "lower")?;
        let hi = slice(upper, d, "upper")?;
        if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
            return Err(Fail(SaaboStatus::InvalidArgument, "bounds need lower < upper".into()));
        }
        m.bounds = lo.iter().copied().zip(hi.iter().copied()).collect();
        Ok(())
    })
}

/// Posterior mean and variance of the latent function at `n` row-major points.
///
/// # Safety
/// `x` must hold `n * d` doubles; `mean` and `var` must hold `n` each.
#[no_mangle]
pub unsafe extern "C" fn saabo_model_posterior(
    model: *const SaaboModel,
    x: *const f64,
    n: usize,
    mean: *mut f64,
    var: *mut f64,
) -> SaaboStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = m.model.d();
        let xm = DMatrix::from_row_slice(n, d, slice(x, n * d, "x")?);
        let mu = m.model.posterior_mean(&xm)?;
        let s2 = m.model.posterior_variance(&xm)?;
        slice_mut(mean, n, "mean")?.copy_from_slice(mu.as_slice());
        slice_mut(var, n, "var")?.copy_from_slice(s2.as_slice());
        Ok(())
    })
}

/// Maximizes the named acquisition over `q` points and writes them row-major
/// into `x_out` (`q * d` doubles). `value_out` may be NULL.
///
/// # Safety
/// `acqf` must be NUL-terminated, `x_out` must hold `q * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn saabo_suggest(
    model: *const SaaboModel,
    acqf: *const c_char,
    q: usize,
    seed: u64,
    x_out: *mut f64,
    value_out: *mut f64,
) -> SaaboStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let kind = AcquisitionKind::parse(str_arg(acqf, "acqf")?)?;
        if q == 0 {
            return Err(Fail(SaaboStatus::InvalidArgument, "q must be positive".into()));
        }
        let d = m.model.d();
        let out = slice_mut(x_out, q * d, "x_out")?;
        let mut req = SuggestRequest::new(kind, OptimizeConfig::new(m.bounds.clone(), q));
        req.seed = seed;
        let res = suggest(&ModelList::from(m.model.clone()), &req)?;
        for a in 0..q {
            for k in 0..d {
                out[a * d + k] = res.x_star[(a, k)];
            }
        }
        if let Some(v) = value_out.as_mut() {
            *v = res.value;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn saabo_model_free(model: *mut SaaboModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
