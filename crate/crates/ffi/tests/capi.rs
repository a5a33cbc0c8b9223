use std::ffi::CStr;
use std::ptr;

use grokfit_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { gf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    if n == 0 {
        return String::new();
    }
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn erf_curve(s: f64, t_star: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let epochs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let values = epochs.iter().map(|&t| 0.5 * libm::erf(s * (t - t_star)) + 0.5).collect();
    (epochs, values)
}

#[test]
fn curve_fit_round_trip() {
    let (e, v) = erf_curve(0.01, 500.0, 1000);
    let mut curve = ptr::null_mut();
    let st = unsafe { gf_curve_new(e.as_ptr(), v.as_ptr(), e.len(), GfCurveKind::Train, &mut curve) };
    assert_eq!(st, GfStatus::Ok);
    assert_eq!(unsafe { gf_curve_len(curve) }, 1000);

    let mut fit = std::mem::MaybeUninit::<GfErfFit>::uninit();
    assert_eq!(unsafe { gf_fit_erf(curve, 0.0, 1.0, fit.as_mut_ptr()) }, GfStatus::Ok);
    let fit = unsafe { fit.assume_init() };
    assert!((fit.s - 0.01).abs() < 1e-8);
    assert!((fit.t_star - 500.0).abs() < 1e-6);

    let mut back = vec![0.0; 3];
    assert_eq!(unsafe { gf_curve_copy(curve, ptr::null_mut(), back.as_mut_ptr(), 3) }, GfStatus::Ok);
    assert_eq!(back, v[..3]);
    unsafe { gf_curve_free(curve) };
}

#[test]
fn errors_are_reported() {
    let e = [0.0, 1.0];
    let v = [0.5, 1.5];
    let mut curve = ptr::null_mut();
    let st = unsafe { gf_curve_new(e.as_ptr(), v.as_ptr(), 2, GfCurveKind::Train, &mut curve) };
    assert_eq!(st, GfStatus::InvalidArgument);
    assert!(curve.is_null());
    assert!(last_error().contains("outside"), "{}", last_error());

    let st = unsafe { gf_curve_new(ptr::null(), v.as_ptr(), 2, GfCurveKind::Train, &mut curve) };
    assert_eq!(st, GfStatus::NullPointer);

    let flat = [0.0; 50];
    let epochs: Vec<f64> = (0..50).map(f64::from).collect();
    assert_eq!(unsafe { gf_curve_new(epochs.as_ptr(), flat.as_ptr(), 50, GfCurveKind::Train, &mut curve) }, GfStatus::Ok);
    let mut fit = std::mem::MaybeUninit::<GfErfFit>::uninit();
    assert_eq!(unsafe { gf_fit_erf(curve, 0.0, 1.0, fit.as_mut_ptr()) }, GfStatus::InsufficientTransition);
    assert_eq!(unsafe { gf_fit_erf(curve, 1.0, 0.5, fit.as_mut_ptr()) }, GfStatus::InvalidArgument);
    unsafe { gf_curve_free(curve) };

    // success clears the message
    assert!(!unsafe { CStr::from_ptr(gf_version()) }.to_bytes().is_empty());
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { gf_linear_run(1.0, 0.01, 1e-10, 2000, &mut run) }, GfStatus::InvalidArgument);
    assert!(run.is_null());
}

#[test]
fn linear_run_handle() {
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { gf_linear_run(1.1, 0.01, 1e-10, 2000, &mut run) }, GfStatus::Ok);
    assert_eq!(last_error(), "");
    let mut m = std::mem::MaybeUninit::<GfMetrics>::uninit();
    assert_eq!(unsafe { gf_linear_run_metrics(run, m.as_mut_ptr()) }, GfStatus::Ok);
    let m = unsafe { m.assume_init() };
    assert!(m.m > 0.0 && m.r_rel > 0.0 && m.r_abs > 0.0);

    let mut again = std::mem::MaybeUninit::<GfMetrics>::uninit();
    assert_eq!(unsafe { gf_metrics_from_fits(&m.fit_train, &m.fit_gen, again.as_mut_ptr()) }, GfStatus::Ok);
    assert_eq!(unsafe { again.assume_init() }, m);

    let mut val = ptr::null_mut();
    assert_eq!(unsafe { gf_linear_run_curve(run, GfCurveKind::Validation, &mut val) }, GfStatus::Ok);
    let mut fit = std::mem::MaybeUninit::<GfErfFit>::uninit();
    assert_eq!(unsafe { gf_fit_erf(val, 0.0, 1.0, fit.as_mut_ptr()) }, GfStatus::Ok);
    assert_eq!(unsafe { fit.assume_init() }, m.fit_gen);
    unsafe {
        gf_curve_free(val);
        gf_linear_run_free(run);
        gf_linear_run_free(ptr::null_mut());
    }
}
