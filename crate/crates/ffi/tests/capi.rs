use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use saabo_ffi::*;

fn toy() -> (Vec<f64>, Vec<f64>) {
    let n = 10;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let a = (i as f64 + 0.5) / n as f64;
        let b = ((i * 7) % n) as f64 / n as f64;
        x.extend([a, b]);
        y.push((5.0 * a).sin() + b * b);
    }
    (x, y)
}

fn last_error() -> String {
    let p = saabo_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fitted() -> *mut SaaboModel {
    let (x, y) = toy();
    let mut m = ptr::null_mut();
    let s = unsafe { saabo_model_fit(x.as_ptr(), y.as_ptr(), 10, 2, 0, &mut m) };
    assert_eq!(s, SaaboStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn fit_and_predict() {
    let m = fitted();
    assert_eq!(unsafe { saabo_model_dim(m) }, 2);
    let (x, y) = toy();
    let mut mean = vec![0.0; 10];
    let mut var = vec![0.0; 10];
    let s = unsafe { saabo_model_posterior(m, x.as_ptr(), 10, mean.as_mut_ptr(), var.as_mut_ptr()) };
    assert_eq!(s, SaaboStatus::Ok);
    for i in 0..10 {
        assert!((mean[i] - y[i]).abs() < 0.05, "{} vs {}", mean[i], y[i]);
        assert!(var[i] >= 0.0);
    }
    assert!(saabo_last_error_message().is_null());
    unsafe { saabo_model_free(m) };
}

#[test]
fn suggest_stays_in_bounds_and_repeats() {
    let m = fitted();
    let lo = [0.2, 0.1];
    let hi = [0.6, 0.9];
    assert_eq!(unsafe { saabo_model_set_bounds(m, lo.as_ptr(), hi.as_ptr(), 2) }, SaaboStatus::Ok);
    let name = CString::new("qei").unwrap();
    let mut a = vec![0.0; 4];
    let mut b = vec![0.0; 4];
    let mut va = 0.0;
    unsafe {
        assert_eq!(saabo_suggest(m, name.as_ptr(), 2, 3, a.as_mut_ptr(), &mut va), SaaboStatus::Ok);
        assert_eq!(saabo_suggest(m, name.as_ptr(), 2, 3, b.as_mut_ptr(), ptr::null_mut()), SaaboStatus::Ok);
    }
    assert_eq!(a, b);
    assert!(va > 0.0);
    for r in 0..2 {
        for k in 0..2 {
            assert!(a[r * 2 + k] >= lo[k] && a[r * 2 + k] <= hi[k]);
        }
    }
    unsafe { saabo_model_free(m) };
}

#[test]
fn json_roundtrip() {
    let m = fitted();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { saabo_model_to_json(m, &mut s) }, SaaboStatus::Ok);
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { saabo_model_from_json(s, &mut m2) }, SaaboStatus::Ok);
    let x = [0.3, 0.7];
    let (mut a, mut b, mut va, mut vb) = (0.0, 0.0, 0.0, 0.0);
    unsafe {
        saabo_model_posterior(m, x.as_ptr(), 1, &mut a, &mut va);
        saabo_model_posterior(m2, x.as_ptr(), 1, &mut b, &mut vb);
        saabo_string_free(s);
        saabo_model_free(m);
        saabo_model_free(m2);
    }
    assert_eq!(a, b);
    assert_eq!(va, vb);
}

#[test]
fn errors_are_reported() {
    let mut m = ptr::null_mut();
    let s = unsafe { saabo_model_fit(ptr::null(), ptr::null(), 3, 1, 0, &mut m) };
    assert_eq!(s, SaaboStatus::NullPointer);
    assert!(m.is_null());
    assert!(last_error().contains("x is null"));

    let bad = CString::new("{not json").unwrap();
    assert_eq!(unsafe { saabo_model_from_json(bad.as_ptr(), &mut m) }, SaaboStatus::Config);

    let model = fitted();
    let name = CString::new("nope").unwrap();
    let mut out = [0.0; 2];
    let s = unsafe { saabo_suggest(model, name.as_ptr(), 1, 0, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, SaaboStatus::Config);
    assert!(last_error().contains("nope"));

    let lo = [0.5, 0.0];
    let hi = [0.4, 1.0];
    assert_eq!(
        unsafe { saabo_model_set_bounds(model, lo.as_ptr(), hi.as_ptr(), 2) },
        SaaboStatus::InvalidArgument
    );
    assert_eq!(unsafe { saabo_model_dim(ptr::null()) }, 0);
    unsafe {
        saabo_model_free(model);
        saabo_model_free(ptr::null_mut());
        saabo_string_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"saabo.h\"\nint main(void) { SaaboModel *m = 0; return saabo_model_dim(m) == 0 && SAABO_STATUS_OK == 0 ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success()),
        Err(e) => eprintln!("no C compiler available: {e}"),
    }
}
