use std::ffi::{CStr, CString};
use std::ptr;

use spectral_cert_ffi::*;

const TINY: &str = r#"{
  "X_bounds": "RectSet([-1], [1])",
  "X_init": "RectSet([-0.5], [0.5])",
  "X_unsafe": ["RectSet([-1], [-0.9])", "RectSet([0.9], [1])"],
  "sigma_l": 0.2,
  "lambda": 1e-5,
  "num_frequencies": 4,
  "lattice_resolution": 60,
  "set_scaling": 0.04,
  "feature_sigma_l": 0.1,
  "time_horizon": 5,
  "system_dynamics": ["x1 / 2"],
  "noise_std": 0.05,
  "num_samples": 200,
  "seed": 3
}"#;

fn last_error() -> String {
    let p = sc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str, format: ScFormat) -> (ScStatus, *mut ScConfig) {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { sc_config_parse(text.as_ptr(), format, &mut cfg) };
    (status, cfg)
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(sc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn parse_errors_set_message() {
    let (status, cfg) = parse("{\"sigma_l\": 0.1}", ScFormat::Json);
    assert_eq!(status, ScStatus::Config);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { sc_config_parse(ptr::null(), ScFormat::Json, &mut cfg) }, ScStatus::NullPointer);
    let mut out = 0.0;
    assert_eq!(unsafe { sc_result_eta(ptr::null(), &mut out) }, ScStatus::NullPointer);
    assert_eq!(unsafe { sc_config_dim(ptr::null()) }, 0);
    unsafe {
        sc_config_free(ptr::null_mut());
        sc_result_free(ptr::null_mut());
        sc_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_reported() {
    let bytes = CString::new(vec![0xff, 0xfe]).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { sc_config_parse(bytes.as_ptr(), ScFormat::Yaml, &mut cfg) }, ScStatus::InvalidUtf8);
}

#[test]
fn unknown_benchmark() {
    let name = CString::new("nope").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { sc_config_benchmark(name.as_ptr(), &mut cfg) }, ScStatus::InvalidArgument);
    let name = CString::new("linear").unwrap();
    assert_eq!(unsafe { sc_config_benchmark(name.as_ptr(), &mut cfg) }, ScStatus::Ok);
    assert_eq!(unsafe { sc_config_dim(cfg) }, 1);
    unsafe { sc_config_free(cfg) };
}

#[test]
fn certify_round_trip() {
    let (status, cfg) = parse(TINY, ScFormat::Json);
    assert_eq!(status, ScStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { sc_config_set_seed(cfg, 5) }, ScStatus::Ok);

    let mut res = ptr::null_mut();
    assert_eq!(unsafe { sc_certify(cfg, 50, &mut res) }, ScStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { sc_result_is_certified(res) }, 1);

    let (mut p, mut eta, mut c) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(sc_result_safety_probability(res, &mut p), ScStatus::Ok);
        assert_eq!(sc_result_eta(res, &mut eta), ScStatus::Ok);
        assert_eq!(sc_result_c(res, &mut c), ScStatus::Ok);
    }
    assert!((p - (1.0 - eta - 5.0 * c).max(0.0)).abs() < 1e-12);

    let mut len = 0;
    assert_eq!(unsafe { sc_result_coefficients(res, ptr::null_mut(), 0, &mut len) }, ScStatus::Ok);
    assert_eq!(len, 7);
    let mut small = vec![0.0; len - 1];
    assert_eq!(
        unsafe { sc_result_coefficients(res, small.as_mut_ptr(), small.len(), &mut len) },
        ScStatus::BufferTooSmall
    );
    let mut b = vec![0.0; len];
    assert_eq!(unsafe { sc_result_coefficients(res, b.as_mut_ptr(), b.len(), &mut len) }, ScStatus::Ok);

    let mut v = 0.0;
    let x = [0.0f64];
    assert_eq!(unsafe { sc_result_evaluate(res, x.as_ptr(), 1, &mut v) }, ScStatus::Ok);
    assert!(v <= eta + 1e-9);
    let x2 = [0.0f64, 0.0];
    assert_eq!(unsafe { sc_result_evaluate(res, x2.as_ptr(), 2, &mut v) }, ScStatus::InvalidArgument);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { sc_result_to_json(res, &mut json) }, ScStatus::Ok);
    let parsed: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(parsed["outcome"], "certified");
    assert_eq!(parsed["b"].as_array().unwrap().len(), 7);
    assert!(parsed["falsification"].is_object());

    unsafe {
        sc_string_free(json);
        sc_result_free(res);
        sc_config_free(cfg);
    }
}

#[test]
fn infeasible_run_has_no_certificate() {
    // Initial and unsafe sets overlap, so no barrier exists.
    let text = TINY.replace("RectSet([0.9], [1])", "RectSet([0.2], [1])");
    let (status, cfg) = parse(&text, ScFormat::Json);
    assert_eq!(status, ScStatus::Ok, "{}", last_error());
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { sc_certify(cfg, 0, &mut res) }, ScStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { sc_result_is_certified(res) }, 0);
    let mut eta = 0.0;
    assert_eq!(unsafe { sc_result_eta(res, &mut eta) }, ScStatus::NoCertificate);
    assert!(!last_error().is_empty());
    unsafe {
        sc_result_free(res);
        sc_config_free(cfg);
    }
}

#[test]
fn config_json_reparses() {
    let (_, cfg) = parse(TINY, ScFormat::Json);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { sc_config_to_json(cfg, &mut json) }, ScStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let (status, again) = parse(&text, ScFormat::Json);
    assert_eq!(status, ScStatus::Ok, "{}", last_error());
    unsafe {
        sc_string_free(json);
        sc_config_free(cfg);
        sc_config_free(again);
    }
}
