//! C ABI over the certification engine.
//!
//! Objects cross the boundary as opaque handles created by `sc_*_new`-style
//! constructors and released with the matching `sc_*_free`. Every fallible
//! call returns an [`ScStatus`]; on failure a message is kept per thread and
//! can be read with [`sc_last_error_message`]. Strings returned to the caller
//! are owned by the caller and must be released with [`sc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spectral_cert::certify::{BarrierCertificate, CertificationResult};
use spectral_cert::data::{Configuration, Format};
use spectral_cert::interface::{benchmark, default_falsify_grid, run_job, JobOptions};
use spectral_cert::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    Dataset = 5,
    Numerical = 6,
    LatticeTooCoarse = 7,
    Backend = 8,
    Io = 9,
    NoCertificate = 10,
    BufferTooSmall = 11,
    Panic = 99,
}

impl From<&Error> for ScStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::MissingKey(_) | Error::SetSyntax(_) | Error::ExprSyntax { .. } => ScStatus::Config,
            Error::UnknownIdentifier(_) => ScStatus::Config,
            Error::InvalidSet(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => {
                ScStatus::InvalidArgument
            }
            Error::Dataset(_) => ScStatus::Dataset,
            Error::Singular(_) | Error::Objective(_) => ScStatus::Numerical,
            Error::Nyquist { .. } | Error::LatticeTooCoarse { .. } => ScStatus::LatticeTooCoarse,
            Error::UnknownBackend(_) | Error::BackendUnavailable(_) => ScStatus::Backend,
            Error::Io(_) => ScStatus::Io,
        }
    }
}

/// Input formats accepted by [`sc_config_parse`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScFormat {
    Yaml = 0,
    Json = 1,
}

/// Opaque configuration handle.
pub struct ScConfig {
    inner: Configuration,
}

/// Opaque result handle.
pub struct ScResult {
    inner: CertificationResult,
    certificate: Option<BarrierCertificate>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ScStatus, String)>) -> ScStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ScStatus::Panic
        }
    }
}

fn engine(e: Error) -> (ScStatus, String) {
    (ScStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (ScStatus, String) {
    (ScStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ScStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (ScStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), (ScStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a configuration document.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_config_parse(text: *const c_char, format: ScFormat, out: *mut *mut ScConfig) -> ScStatus {
    guard(|| {
        let text = read_str(text, "text")?;
        let format = match format {
            ScFormat::Yaml => Format::Yaml,
            ScFormat::Json => Format::Json,
        };
        let inner = Configuration::parse(text, format).map_err(engine)?;
        write_out(out, ScConfig { inner })
    })
}

/// Loads a configuration file; relative dataset paths resolve against its directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_config_load(path: *const c_char, out: *mut *mut ScConfig) -> ScStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let inner = Configuration::from_path(Path::new(path)).map_err(engine)?;
        write_out(out, ScConfig { inner })
    })
}

/// Loads one of the bundled benchmark configurations by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_config_benchmark(name: *const c_char, out: *mut *mut ScConfig) -> ScStatus {
    guard(|| {
        let name = read_str(name, "name")?;
        let inner =
            benchmark(name).ok_or_else(|| (ScStatus::InvalidArgument, format!("unknown benchmark `{name}`")))?;
        write_out(out, ScConfig { inner })
    })
}

/// Overrides the sampling seed.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_config_set_seed(config: *mut ScConfig, seed: u64) -> ScStatus {
    guard(|| {
        let config = config.as_mut().ok_or_else(|| null("config"))?;
        config.inner.seed = seed;
        Ok(())
    })
}

/// State dimension of the configured system, or 0 for a NULL handle.
///
/// # Safety
/// `config` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_config_dim(config: *const ScConfig) -> usize {
    config.as_ref().map_or(0, |c| c.inner.dim())
}

/// Serializes the configuration as JSON. Free with [`sc_string_free`].
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_config_to_json(config: *const ScConfig, out: *mut *mut c_char) -> ScStatus {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(config.inner.to_json());
        Ok(())
    })
}

/// Releases a configuration. NULL is ignored.
///
/// # Safety
/// `config` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sc_config_free(config: *mut ScConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the full pipeline. `falsify_grid` is the falsifier grid size per
/// dimension: 0 skips falsification, `usize::MAX` picks a default by dimension.
/// An uncertified outcome (for example an infeasible LP) is still `Ok`; query
/// it with [`sc_result_is_certified`].
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_certify(config: *const ScConfig, falsify_grid: usize, out: *mut *mut ScResult) -> ScStatus {
    guard(|| {
        let config = &config.as_ref().ok_or_else(|| null("config"))?.inner;
        let falsify = match falsify_grid {
            0 => None,
            usize::MAX => Some(default_falsify_grid(config.dim())),
            g => Some(g),
        };
        let opts = JobOptions { falsify, ..JobOptions::default() };
        let inner = run_job(config, &opts, &|_| {}).map_err(engine)?;
        let certificate = inner.certificate().map_err(engine)?;
        write_out(out, ScResult { inner, certificate })
    })
}

/// Nonzero when the LP produced a certificate.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_result_is_certified(result: *const ScResult) -> i32 {
    result.as_ref().map_or(0, |r| r.inner.is_certified() as i32)
}

unsafe fn certificate<'a>(result: *const ScResult) -> Result<&'a BarrierCertificate, (ScStatus, String)> {
    let result = result.as_ref().ok_or_else(|| null("result"))?;
    result.certificate.as_ref().ok_or_else(|| (ScStatus::NoCertificate, "the run produced no certificate".into()))
}

unsafe fn write_f64(out: *mut f64, v: f64) -> Result<(), (ScStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = v;
    Ok(())
}

/// Safety probability lower bound 1 − (η + cT), clipped at 0.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_result_safety_probability(result: *const ScResult, out: *mut f64) -> ScStatus {
    guard(|| write_f64(out, certificate(result)?.bound.probability))
}

/// Initial-set level η of the certificate.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_result_eta(result: *const ScResult, out: *mut f64) -> ScStatus {
    guard(|| write_f64(out, certificate(result)?.eta))
}

/// Per-step drift bound c of the certificate.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_result_c(result: *const ScResult, out: *mut f64) -> ScStatus {
    guard(|| write_f64(out, certificate(result)?.c))
}

/// Copies the barrier coefficients into `buf`. `len` receives the number of
/// coefficients; pass `buf = NULL` to query it. Fails with `BufferTooSmall`
/// if `capacity` is insufficient.
///
/// # Safety
/// `buf` must be NULL or point to `capacity` writable doubles; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_result_coefficients(
    result: *const ScResult,
    buf: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> ScStatus {
    guard(|| {
        let b = &certificate(result)?.b;
        if len.is_null() {
            return Err(null("len"));
        }
        *len = b.len();
        if buf.is_null() {
            return Ok(());
        }
        if capacity < b.len() {
            return Err((ScStatus::BufferTooSmall, format!("need {} doubles, got {capacity}", b.len())));
        }
        std::slice::from_raw_parts_mut(buf, b.len()).copy_from_slice(b);
        Ok(())
    })
}

/// Evaluates the barrier at a state `x` of length `dim`.
///
/// # Safety
/// `x` must point to `dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_result_evaluate(result: *const ScResult, x: *const f64, dim: usize, out: *mut f64) -> ScStatus {
    guard(|| {
        let cert = certificate(result)?;
        if x.is_null() {
            return Err(null("x"));
        }
        let n = cert.feature_map.dim();
        if dim != n {
            return Err((ScStatus::InvalidArgument, format!("dimension mismatch: expected {n}, got {dim}")));
        }
        write_f64(out, cert.evaluate(std::slice::from_raw_parts(x, dim)))
    })
}

/// Serializes the full result as JSON. Free with [`sc_string_free`].
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_result_to_json(result: *const ScResult, out: *mut *mut c_char) -> ScStatus {
    guard(|| {
        let result = result.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = into_c_string(result.inner.to_json());
        Ok(())
    })
}

/// Releases a result. NULL is ignored.
///
/// # Safety
/// `result` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sc_result_free(result: *mut ScResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
