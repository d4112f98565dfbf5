//! C interface to `jumpcons`.
//!
//! A session is built from the same JSON configuration the command-line
//! tool reads and owns the model, its dynamics and the solved curve
//! family. Every function returns a [`JcStatus`]; on failure a message is
//! kept per thread and can be read with [`jc_last_error`]. Sessions are
//! immutable after construction and may be shared between threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use jumpcons::config::{BuiltFamily, RunConfig};
use jumpcons::consistency::{consistency_residual, residual_report};
use jumpcons::model::JumpDiffusionModel;
use jumpcons::simulate::{martingale_test, mc_bond_price};
use jumpcons::Error;

/// Status codes; the non-zero values match the exit codes of the
/// command-line tool where both exist.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JcStatus {
    Ok = 0,
    /// A required pointer was null or a length did not match.
    InvalidArgument = 1,
    /// Invalid configuration, model or state.
    Spec = 2,
    /// Riccati blow-up or quadrature that did not converge.
    Numeric = 3,
    /// Divergent jump integrals.
    Regularity = 5,
    Io = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// Opaque session handle.
pub struct JcSession {
    config: RunConfig,
    model: JumpDiffusionModel,
    family: BuiltFamily,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> JcStatus {
    match e {
        Error::Explosion { .. } | Error::Accuracy { .. } => JcStatus::Numeric,
        Error::Regularity { .. } | Error::Divergent { .. } => JcStatus::Regularity,
        Error::Io(_) => JcStatus::Io,
        _ => JcStatus::Spec,
    }
}

struct Failure(JcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(JcStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, recording the error message and mapping panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> JcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            JcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            JcStatus::Internal
        }
    }
}

unsafe fn handle<'a>(s: *const JcSession) -> Result<&'a JcSession, Failure> {
    s.as_ref().ok_or_else(|| invalid("session is null"))
}

unsafe fn state<'a>(s: &JcSession, x: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if x.is_null() {
        return Err(invalid("state pointer is null"));
    }
    if len != s.model.dim() {
        return Err(invalid("state length differs from the model dimension"));
    }
    Ok(std::slice::from_raw_parts(x, len))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

/// Builds a session from a NUL-terminated JSON configuration. On success
/// `*out` receives a handle to release with [`jc_session_free`].
///
/// # Safety
/// `config_json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jc_session_new(config_json: *const c_char, out: *mut *mut JcSession) -> JcStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(invalid("configuration is null"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| Failure(JcStatus::Spec, "configuration is not UTF-8".into()))?;
        let config = RunConfig::from_json(text)?;
        config.validate()?;
        let base = config.base_model()?;
        let family = config.build_family(&base)?;
        let model = config.dynamics(&base)?;
        put(out, Box::into_raw(Box::new(JcSession { config, model, family })))
    })
}

/// Releases a session; null is ignored.
///
/// # Safety
/// `session` must come from [`jc_session_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jc_session_free(session: *mut JcSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// State dimension of the session's model, 0 for a null session.
///
/// # Safety
/// `session` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jc_session_dim(session: *const JcSession) -> usize {
    session.as_ref().map_or(0, |s| s.model.dim())
}

/// Forward rate `G(tau, x)` of the session's curve family.
///
/// # Safety
/// Pointers must be valid; `x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn jc_forward_rate(
    session: *const JcSession,
    tau: f64,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> JcStatus {
    guard(|| {
        let s = handle(session)?;
        let x = state(s, x, len)?;
        check_maturity(s, tau)?;
        put(out, s.family.curve.value(tau, x))
    })
}

fn check_maturity(s: &JcSession, tau: f64) -> Result<(), Failure> {
    let max = s.family.curve.max_maturity();
    if !(tau >= 0.0 && tau <= max) {
        return Err(Error::Range { tau, max }.into());
    }
    Ok(())
}

/// Zero-coupon bond price `P(tau, x)` of the session's curve family.
///
/// # Safety
/// Pointers must be valid; `x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn jc_bond_price(
    session: *const JcSession,
    tau: f64,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> JcStatus {
    guard(|| {
        let s = handle(session)?;
        let x = state(s, x, len)?;
        check_maturity(s, tau)?;
        put(out, s.family.curve.bond_price(tau, x))
    })
}

/// Consistency residual of the model and family at `(tau, x)`.
///
/// # Safety
/// Pointers must be valid; `x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn jc_consistency_residual(
    session: *const JcSession,
    tau: f64,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> JcStatus {
    guard(|| {
        let s = handle(session)?;
        let x = state(s, x, len)?;
        let r = consistency_residual(&s.model, s.family.curve.as_ref(), x, tau, s.config.numerics.quad_tol)?;
        put(out, r.value)
    })
}

/// Residuals over the configured grid: the largest absolute residual and
/// whether it is below the configured tolerance (1) or not (0).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jc_check(session: *const JcSession, max_abs: *mut f64, consistent: *mut i32) -> JcStatus {
    guard(|| {
        let s = handle(session)?;
        let cfg = &s.config;
        let xs = cfg.x_points(&s.model)?;
        let report = residual_report(&s.model, s.family.curve.as_ref(), &cfg.taus(), &xs, cfg.numerics.quad_tol)?;
        if let Some(f) = report.first_failure() {
            return Err(f.error.clone().into());
        }
        put(max_abs, report.max_abs)?;
        put(consistent, report.is_consistent(cfg.numerics.tol) as i32)
    })
}

/// Monte Carlo bond price of maturity `maturity` from `x`, discounting at
/// the family's short rate. Uses the configured `dt` and `n_paths`.
///
/// # Safety
/// Pointers must be valid; `x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn jc_mc_bond_price(
    session: *const JcSession,
    x: *const f64,
    len: usize,
    maturity: f64,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> JcStatus {
    guard(|| {
        let s = handle(session)?;
        let x = state(s, x, len)?;
        let curve = s.family.curve.as_ref();
        let rate = |y: &[f64]| curve.value(0.0, y);
        let n = &s.config.numerics;
        let est = mc_bond_price(&s.model, &rate, x, maturity, n.dt, n.n_paths, seed)?;
        put(mean, est.mean)?;
        put(std_error, est.std_error)
    })
}

/// z-score of the martingale test of `P(t, T) / B_t` from `x`, with the
/// configured `t`, `maturity`, `dt` and `n_paths`.
///
/// # Safety
/// Pointers must be valid; `x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn jc_martingale_z(
    session: *const JcSession,
    x: *const f64,
    len: usize,
    seed: u64,
    z_score: *mut f64,
) -> JcStatus {
    guard(|| {
        let s = handle(session)?;
        let x = state(s, x, len)?;
        let n = &s.config.numerics;
        let r = martingale_test(&s.model, s.family.curve.as_ref(), x, n.t, n.maturity, n.dt, n.n_paths, seed)?;
        put(z_score, r.z_score)
    })
}

/// Copies the calling thread's last error message into `buf` as a C
/// string, truncated to `len - 1` bytes. Returns the full message length;
/// 0 means no error.
///
/// # Safety
/// `buf` must be null or writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn jc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn jc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
