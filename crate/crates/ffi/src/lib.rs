//! C ABI for grokfit.
//!
//! Curves and linear-model runs are opaque handles created and freed by this
//! library. Every fallible function returns a [`GfStatus`]; on failure the
//! message is available from [`gf_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use grokfit::linear_dynamics::{run_lambda, LinearConfig, LinearRun};
use grokfit::{fit_erf, AccuracyCurve, CurveKind, Error, ErfFit, FitSpec, GrokkingMetrics};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    FitDegenerate = 3,
    InsufficientTransition = 4,
    NumericFailure = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfCurveKind {
    Train = 0,
    Validation = 1,
}

/// Parameters of `a·erf(s·(t − t_star) + theta) + b`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfErfFit {
    pub s: f64,
    pub t_star: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub rmse_window: f64,
    pub n_window_points: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfMetrics {
    pub m: f64,
    pub r_rel: f64,
    pub r_abs: f64,
    pub fit_train: GfErfFit,
    pub fit_gen: GfErfFit,
}

/// Opaque accuracy curve.
pub struct GfCurve(AccuracyCurve);

/// Opaque linear-model run: both curves plus their measures.
pub struct GfLinearRun(LinearRun);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> GfStatus {
    match err {
        Error::FitDegenerate(_) => GfStatus::FitDegenerate,
        Error::InsufficientTransition { .. } => GfStatus::InsufficientTransition,
        Error::Quadrature { .. } | Error::Bracket(_) | Error::Numeric(_) | Error::Divergence { .. } => GfStatus::NumericFailure,
        Error::Domain(_) | Error::Parse { .. } | Error::Io(_) => GfStatus::InvalidArgument,
    }
}

fn guard<F: FnOnce() -> Result<(), (GfStatus, String)>>(f: F) -> GfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            GfStatus::Panic
        }
    }
}

fn lift(err: Error) -> (GfStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (GfStatus, String) {
    (GfStatus::NullPointer, format!("{what} is null"))
}

fn to_c_fit(f: &ErfFit) -> GfErfFit {
    GfErfFit { s: f.s, t_star: f.t_star, a: f.a, b: f.b, theta: f.theta, rmse_window: f.rmse_window, n_window_points: f.n_window_points }
}

fn from_c_fit(f: &GfErfFit) -> ErfFit {
    ErfFit { s: f.s, t_star: f.t_star, a: f.a, b: f.b, theta: f.theta, rmse_window: f.rmse_window, n_window_points: f.n_window_points }
}

fn to_c_metrics(m: &GrokkingMetrics) -> GfMetrics {
    GfMetrics { m: m.m, r_rel: m.r_rel, r_abs: m.r_abs, fit_train: to_c_fit(&m.fit_train), fit_gen: to_c_fit(&m.fit_gen) }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len − 1` bytes) and returns the full message length, or 0
/// when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn gf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a curve from `len` epochs and accuracies (copied).
///
/// # Safety
/// `epochs` and `values` must be valid for `len` reads; `out` must be valid
/// for one write. Free the result with [`gf_curve_free`].
#[no_mangle]
pub unsafe extern "C" fn gf_curve_new(
    epochs: *const f64,
    values: *const f64,
    len: usize,
    kind: GfCurveKind,
    out: *mut *mut GfCurve,
) -> GfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if epochs.is_null() || values.is_null() {
            return Err(null("epochs or values"));
        }
        let e = std::slice::from_raw_parts(epochs, len).to_vec();
        let v = std::slice::from_raw_parts(values, len).to_vec();
        let kind = match kind {
            GfCurveKind::Train => CurveKind::Train,
            GfCurveKind::Validation => CurveKind::Validation,
        };
        let curve = AccuracyCurve::new(e, v, kind).map_err(lift)?;
        *out = Box::into_raw(Box::new(GfCurve(curve)));
        Ok(())
    })
}

/// # Safety
/// `curve` must be null or a pointer from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gf_curve_free(curve: *mut GfCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gf_curve_len(curve: *const GfCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.len())
}

/// Copies up to `cap` samples into `epochs` and `values` (either may be null).
///
/// # Safety
/// `curve` must be a live handle; non-null outputs must be valid for `cap`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn gf_curve_copy(curve: *const GfCurve, epochs: *mut f64, values: *mut f64, cap: usize) -> GfStatus {
    guard(|| {
        let c = curve.as_ref().ok_or_else(|| null("curve"))?;
        let n = c.0.len().min(cap);
        if !epochs.is_null() {
            ptr::copy_nonoverlapping(c.0.epochs().as_ptr(), epochs, n);
        }
        if !values.is_null() {
            ptr::copy_nonoverlapping(c.0.values().as_ptr(), values, n);
        }
        Ok(())
    })
}

/// Fits the curve on the accuracy range `[baseline, max_accuracy]`.
///
/// # Safety
/// `curve` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn gf_fit_erf(curve: *const GfCurve, baseline: f64, max_accuracy: f64, out: *mut GfErfFit) -> GfStatus {
    guard(|| {
        let c = curve.as_ref().ok_or_else(|| null("curve"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let spec = FitSpec::new(baseline, max_accuracy).map_err(lift)?;
        *out = to_c_fit(&fit_erf(&c.0, &spec).map_err(lift)?);
        Ok(())
    })
}

/// Grokking measures from a training and a validation fit.
///
/// # Safety
/// All pointers must be valid; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn gf_metrics_from_fits(fit_train: *const GfErfFit, fit_gen: *const GfErfFit, out: *mut GfMetrics) -> GfStatus {
    guard(|| {
        let t = fit_train.as_ref().ok_or_else(|| null("fit_train"))?;
        let g = fit_gen.as_ref().ok_or_else(|| null("fit_gen"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = GrokkingMetrics::from_fits(from_c_fit(t), from_c_fit(g)).map_err(lift)?;
        *out = to_c_metrics(&m);
        Ok(())
    })
}

/// Analytic linear-model curves and their fits for one λ.
///
/// # Safety
/// `out` must be valid for one write. Free the result with
/// [`gf_linear_run_free`].
#[no_mangle]
pub unsafe extern "C" fn gf_linear_run(
    lambda: f64,
    eta0: f64,
    epsilon: f64,
    grid_points: usize,
    out: *mut *mut GfLinearRun,
) -> GfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = LinearConfig { lambda, eta0, epsilon, grid_points };
        let run = run_lambda(&cfg, &FitSpec::unit_range()).map_err(lift)?;
        *out = Box::into_raw(Box::new(GfLinearRun(run)));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from [`gf_linear_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gf_linear_run_free(run: *mut GfLinearRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn gf_linear_run_metrics(run: *const GfLinearRun, out: *mut GfMetrics) -> GfStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = to_c_metrics(&r.0.metrics);
        Ok(())
    })
}

/// Copies one of the run's curves into a new handle owned by the caller.
///
/// # Safety
/// `run` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn gf_linear_run_curve(run: *const GfLinearRun, kind: GfCurveKind, out: *mut *mut GfCurve) -> GfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let curve = match kind {
            GfCurveKind::Train => r.0.train.clone(),
            GfCurveKind::Validation => r.0.validation.clone(),
        };
        *out = Box::into_raw(Box::new(GfCurve(curve)));
        Ok(())
    })
}
