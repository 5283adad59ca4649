//! C ABI for the `semiclass` simulator.
//!
//! Every function returns an `SC_*` status code and writes results through
//! out-pointers. Handles are opaque and must be released with their `*_free`
//! function; strings returned by the library are released with
//! [`sc_string_free`]. After a failure, [`sc_last_error_message`] describes it
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use semiclass::cli::{build_spec, parse_config, summary_json, Overrides};
use semiclass::ensemble::{run_ensemble, EnsembleResult};
use semiclass::model::{derive_constants, report_from, DerivedConstants, ModelParams, CLASSICAL_REGIME_THRESHOLD};
use semiclass::trajectories::green_function;
use semiclass::Error;

pub const SC_OK: i32 = 0;
pub const SC_ERR_NULL: i32 = 1;
pub const SC_ERR_INVALID_PARAM: i32 = 2;
pub const SC_ERR_PRECONDITION: i32 = 3;
pub const SC_ERR_RUNTIME: i32 = 4;
pub const SC_ERR_CONFIG: i32 = 5;
pub const SC_ERR_PANIC: i32 = 6;

/// Model parameters, field for field as in the JSON config.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ScModelParams {
    pub mass_large: f64,
    pub mass_small: f64,
    pub omega: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub kt: f64,
    pub hbar: f64,
    pub sigma: f64,
    pub eta: f64,
    pub duration: f64,
    pub dt: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ScDerivedConstants {
    pub d: f64,
    pub d_tilde: f64,
    pub sigma1_sq: f64,
    pub delta: f64,
    pub force_noise_var: f64,
    pub record_noise_var: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ScValidation {
    pub decoherent: bool,
    pub classical_regime: bool,
    pub positivity_margin: f64,
}

/// Opaque model handle.
pub struct ScModel {
    params: ModelParams,
    consts: DerivedConstants,
}

/// Opaque handle to a finished ensemble.
pub struct ScEnsemble {
    result: EnsembleResult,
    hash: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter { .. } => SC_ERR_INVALID_PARAM,
        Error::Config(_) => SC_ERR_CONFIG,
        Error::Run { .. } | Error::Io(_) | Error::Leakage { .. } | Error::LocalizationResolution { .. } => {
            SC_ERR_RUNTIME
        }
        _ => SC_ERR_PRECONDITION,
    }
}

fn fail(e: Error) -> i32 {
    let code = code_of(&e);
    set_error(e.to_string());
    code
}

/// Runs `f`, converting panics into `SC_ERR_PANIC`.
fn guard(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => {
            if code == SC_OK {
                set_error("");
            }
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SC_ERR_PANIC
        }
    }
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return SC_ERR_NULL;
        })+
    };
}

/// Validates `params` and creates a model handle in `*out`.
///
/// # Safety
/// `params` must point to a valid `ScModelParams` and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sc_model_new(params: *const ScModelParams, out: *mut *mut ScModel) -> i32 {
    guard(|| {
        non_null!(params, out);
        let p = unsafe { *params };
        let params = ModelParams {
            mass_large: p.mass_large,
            mass_small: p.mass_small,
            omega: p.omega,
            lambda: p.lambda,
            gamma: p.gamma,
            kt: p.kt,
            hbar: p.hbar,
            sigma: p.sigma,
            eta: p.eta,
            duration: p.duration,
            dt: p.dt,
        };
        let consts = match params.validate_structure().and_then(|_| derive_constants(&params)) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        unsafe { *out = Box::into_raw(Box::new(ScModel { params, consts })) };
        SC_OK
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`sc_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_model_free(model: *mut ScModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_constants(model: *const ScModel, out: *mut ScDerivedConstants) -> i32 {
    guard(|| {
        non_null!(model, out);
        let c = unsafe { &(*model).consts };
        unsafe {
            *out = ScDerivedConstants {
                d: c.d,
                d_tilde: c.d_tilde,
                sigma1_sq: c.sigma1_sq,
                delta: c.delta,
                force_noise_var: c.force_noise_var,
                record_noise_var: c.record_noise_var,
            }
        };
        SC_OK
    })
}

/// Regime checks for the model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_validate(model: *const ScModel, out: *mut ScValidation) -> i32 {
    guard(|| {
        non_null!(model, out);
        let m = unsafe { &*model };
        let r = report_from(&m.params, &m.consts, CLASSICAL_REGIME_THRESHOLD);
        unsafe {
            *out = ScValidation {
                decoherent: r.decoherent,
                classical_regime: r.classical_regime,
                positivity_margin: r.positivity_margin,
            }
        };
        SC_OK
    })
}

/// Retarded Green function of the small oscillator.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_green_function(model: *const ScModel, t: f64, t_prime: f64, out: *mut f64) -> i32 {
    guard(|| {
        non_null!(model, out);
        if !(t.is_finite() && t_prime.is_finite()) {
            set_error("times must be finite");
            return SC_ERR_INVALID_PARAM;
        }
        unsafe { *out = green_function(&(*model).params, t, t_prime) };
        SC_OK
    })
}

/// Runs the ensemble described by a JSON run config (the CLI schema).
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_ensemble_run_json(config_json: *const c_char, out: *mut *mut ScEnsemble) -> i32 {
    guard(|| {
        non_null!(config_json, out);
        let text = match unsafe { CStr::from_ptr(config_json) }.to_str() {
            Ok(s) => s.to_owned(),
            Err(e) => {
                set_error(format!("config is not UTF-8: {e}"));
                return SC_ERR_CONFIG;
            }
        };
        let loaded = match parse_config(Path::new("<config>"), text, &Overrides::default()) {
            Ok(c) => c,
            Err(e) => {
                set_error(e.message);
                return SC_ERR_CONFIG;
            }
        };
        let spec = match build_spec(&loaded) {
            Ok(s) => s,
            Err(e) => {
                set_error(e.message);
                return SC_ERR_CONFIG;
            }
        };
        match run_ensemble(&spec) {
            Ok(result) => {
                unsafe {
                    *out = Box::into_raw(Box::new(ScEnsemble {
                        result,
                        hash: loaded.hash,
                    }))
                };
                SC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `ensemble` must come from [`sc_ensemble_run_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_ensemble_free(ensemble: *mut ScEnsemble) {
    if !ensemble.is_null() {
        drop(unsafe { Box::from_raw(ensemble) });
    }
}

/// The ensemble's summary as JSON; release with [`sc_string_free`].
///
/// # Safety
/// `ensemble` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_ensemble_summary_json(ensemble: *const ScEnsemble, out: *mut *mut c_char) -> i32 {
    guard(|| {
        non_null!(ensemble, out);
        let e = unsafe { &*ensemble };
        let s = summary_json(&e.result, &e.hash);
        unsafe { *out = CString::new(s).expect("JSON has no NUL").into_raw() };
        SC_OK
    })
}

/// Fraction of classified runs in branch `k` and its standard error.
///
/// # Safety
/// `ensemble` must be a live handle; `fraction` and `std_error` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_ensemble_branch_fraction(
    ensemble: *const ScEnsemble,
    k: usize,
    fraction: *mut f64,
    std_error: *mut f64,
) -> i32 {
    guard(|| {
        non_null!(ensemble, fraction, std_error);
        let branches = unsafe { &(*ensemble).result.branches };
        let Some(b) = branches else {
            set_error("ensemble has no branch classification");
            return SC_ERR_PRECONDITION;
        };
        if k >= b.fractions.len() {
            set_error(format!("branch {k} out of range ({} branches)", b.fractions.len()));
            return SC_ERR_INVALID_PARAM;
        }
        unsafe {
            *fraction = b.fractions[k];
            *std_error = b.std_errors[k];
        }
        SC_OK
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Message for the last failure on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
