use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use jumpcons_ffi::*;

const VASICEK: &str = r#"{"model": {"kind": "preset", "name": "vasicek"}, "state": [0.03],
    "numerics": {"n_paths": 4000, "dt": 0.01}}"#;

fn session(config: &str) -> *mut JcSession {
    let text = CString::new(config).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { jc_session_new(text.as_ptr(), &mut s) }, JcStatus::Ok, "{}", last_error());
    assert!(!s.is_null());
    s
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        jc_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn vasicek_prices_and_check() {
    let s = session(VASICEK);
    let x = [0.03];
    unsafe {
        assert_eq!(jc_session_dim(s), 1);
        let mut p = 0.0;
        assert_eq!(jc_bond_price(s, 5.0, x.as_ptr(), 1, &mut p), JcStatus::Ok);
        let (k, mu, sigma, tau) = (0.5f64, 0.04, 0.02, 5.0);
        let h1 = (1.0 - (-k * tau).exp()) / k;
        let h0 = (mu - sigma * sigma / (2.0 * k * k)) * (tau - h1) + sigma * sigma * h1 * h1 / (4.0 * k);
        assert!((p - (-(h0 + h1 * 0.03)).exp()).abs() < 1e-9);

        let mut r = 0.0;
        assert_eq!(jc_forward_rate(s, 0.0, x.as_ptr(), 1, &mut r), JcStatus::Ok);
        assert!((r - 0.03).abs() < 1e-15);

        let mut residual = 1.0;
        assert_eq!(jc_consistency_residual(s, 2.0, x.as_ptr(), 1, &mut residual), JcStatus::Ok);
        assert!(residual.abs() < 1e-6);

        let (mut max_abs, mut consistent) = (0.0, 0);
        assert_eq!(jc_check(s, &mut max_abs, &mut consistent), JcStatus::Ok);
        assert_eq!(consistent, 1);
        assert!(max_abs < 1e-6);

        let (mut mean, mut se) = (0.0, 0.0);
        assert_eq!(jc_mc_bond_price(s, x.as_ptr(), 1, 5.0, 9, &mut mean, &mut se), JcStatus::Ok);
        assert!(se > 0.0 && ((mean - p) / se).abs() < 5.0);
        let (mut again, mut se2) = (0.0, 0.0);
        jc_mc_bond_price(s, x.as_ptr(), 1, 5.0, 9, &mut again, &mut se2);
        assert_eq!((mean, se), (again, se2));

        let mut z = f64::NAN;
        assert_eq!(jc_martingale_z(s, x.as_ptr(), 1, 9, &mut z), JcStatus::Ok);
        assert!(z.abs() < 5.0);
        jc_session_free(s);
    }
}

#[test]
fn errors_are_reported_with_messages() {
    let bad = CString::new(r#"{"model": {"kind": "preset", "name": "nope"}}"#).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { jc_session_new(bad.as_ptr(), &mut s) }, JcStatus::Spec);
    assert!(s.is_null());
    assert!(last_error().contains("config"));

    let boom = r#"{"model": {"kind": "preset", "name": "cir-like", "sigma": 1.0},
        "family": {"kind": "affine", "theta": [0.0, -1.0]}, "numerics": {"tau_max": 10.0}}"#;
    let text = CString::new(boom).unwrap();
    assert_eq!(unsafe { jc_session_new(text.as_ptr(), &mut s) }, JcStatus::Numeric);
    assert!(last_error().contains("exploded"));

    let s = session(VASICEK);
    unsafe {
        let mut out = 0.0;
        let x = [0.03, 0.0];
        assert_eq!(jc_bond_price(s, 1.0, x.as_ptr(), 2, &mut out), JcStatus::InvalidArgument);
        assert_eq!(jc_bond_price(s, 1.0, ptr::null(), 1, &mut out), JcStatus::InvalidArgument);
        assert_eq!(jc_bond_price(s, 1.0, x.as_ptr(), 1, ptr::null_mut()), JcStatus::InvalidArgument);
        assert_eq!(jc_bond_price(s, 31.0, x.as_ptr(), 1, &mut out), JcStatus::Spec);
        assert!(last_error().contains("outside the solved range"));
        assert_eq!(jc_bond_price(s, 1.0, x.as_ptr(), 1, &mut out), JcStatus::Ok);
        assert_eq!(jc_last_error(ptr::null_mut(), 0), 0);
        assert_eq!(jc_bond_price(ptr::null(), 1.0, x.as_ptr(), 1, &mut out), JcStatus::InvalidArgument);
        assert_eq!(jc_session_dim(ptr::null()), 0);
        jc_session_free(s);
        jc_session_free(ptr::null_mut());
    }
}

#[test]
fn irregular_jumps_map_to_regularity_status() {
    let cfg = r#"{"model": {"kind": "preset", "name": "ns-trivial", "intensity": 0.5,
        "jumps": {"kind": "gaussian", "mean": [0, 0, 0, 0], "stddev": [0, 0, 0, 1]}},
        "family": {"kind": "numeric", "base": {"kind": "nelson-siegel"}}}"#;
    let s = session(cfg);
    let x = [0.03, -0.01, -0.02, 0.5];
    let mut out = 0.0;
    assert_eq!(unsafe { jc_consistency_residual(s, 1.0, x.as_ptr(), 4, &mut out) }, JcStatus::Regularity);
    unsafe { jc_session_free(s) };
}

#[test]
fn truncated_error_buffer() {
    let bad = CString::new("{").unwrap();
    let mut s = ptr::null_mut();
    unsafe { jc_session_new(bad.as_ptr(), &mut s) };
    let full = unsafe { jc_last_error(ptr::null_mut(), 0) };
    let mut buf = [1 as c_char; 8];
    assert_eq!(unsafe { jc_last_error(buf.as_mut_ptr(), buf.len()) }, full);
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 7);
    assert_eq!(unsafe { CStr::from_ptr(jc_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/jumpcons.h")).unwrap();
    for name in [
        "jc_session_new", "jc_session_free", "jc_session_dim", "jc_forward_rate", "jc_bond_price",
        "jc_consistency_residual", "jc_check", "jc_mc_bond_price", "jc_martingale_z", "jc_last_error", "jc_version",
        "typedef struct JcSession JcSession", "JC_STATUS_REGULARITY = 5",
    ] {
        assert!(header.contains(name), "{name}");
    }
    let obj = tempfile::NamedTempFile::new().unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-c", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("c/smoke.c"))
        .arg("-o")
        .arg(obj.path())
        .output()
        .expect("a C compiler is needed to check the header");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
