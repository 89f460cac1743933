//! Exercises the exported C ABI exactly as a foreign caller would: raw
//! pointers, nul-terminated strings and status codes.

use std::ffi::{CStr, CString};
use std::ptr;

use detox_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(detox_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn aggregator_round_trip() {
    unsafe {
        let mut handle: *mut DetoxAggregator = ptr::null_mut();
        let json = cstr(r#"{"kind":"coord_median"}"#);
        assert_eq!(detox_aggregator_new(json.as_ptr(), &mut handle), DetoxStatus::Ok);
        assert!(!handle.is_null());

        // three 2-d vectors, row major
        let data = [1.0, 10.0, 2.0, 20.0, 100.0, -5.0];
        let mut out = [0.0f64; 2];
        assert_eq!(
            detox_aggregator_apply(handle, data.as_ptr(), 3, 2, out.as_mut_ptr()),
            DetoxStatus::Ok
        );
        assert_eq!(out, [2.0, 10.0]);
        detox_aggregator_free(handle);
    }
}

#[test]
fn aggregator_rejects_bad_json() {
    unsafe {
        let mut handle: *mut DetoxAggregator = ptr::null_mut();
        let json = cstr(r#"{"kind":"nope"}"#);
        assert_eq!(
            detox_aggregator_new(json.as_ptr(), &mut handle),
            DetoxStatus::InvalidConfig
        );
        assert!(handle.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn aggregator_null_pointer_status() {
    unsafe {
        let mut handle: *mut DetoxAggregator = ptr::null_mut();
        assert_eq!(
            detox_aggregator_new(ptr::null(), &mut handle),
            DetoxStatus::NullPointer
        );

        let json = cstr(r#"{"kind":"mean"}"#);
        assert_eq!(detox_aggregator_new(json.as_ptr(), &mut handle), DetoxStatus::Ok);
        let mut out = [0.0f64; 1];
        assert_eq!(
            detox_aggregator_apply(handle, ptr::null(), 1, 1, out.as_mut_ptr()),
            DetoxStatus::NullPointer
        );
        detox_aggregator_free(handle);
    }
}

#[test]
fn aggregator_rejects_non_finite_data() {
    unsafe {
        let mut handle: *mut DetoxAggregator = ptr::null_mut();
        let json = cstr(r#"{"kind":"mean"}"#);
        assert_eq!(detox_aggregator_new(json.as_ptr(), &mut handle), DetoxStatus::Ok);
        let data = [1.0, f64::NAN];
        let mut out = [0.0f64; 1];
        assert_eq!(
            detox_aggregator_apply(handle, data.as_ptr(), 2, 1, out.as_mut_ptr()),
            DetoxStatus::AggregationFailed
        );
        detox_aggregator_free(handle);
    }
}

#[test]
fn config_parse_and_query() {
    let json = cstr(
        r#"{
            "p": 45, "q": 5, "r": 3, "b": 1440, "k": 3, "d": 10,
            "agg0": {"kind": "mean"},
            "agg1": {"kind": "coord_median"},
            "attack": {"kind": "reverse_gradient"},
            "lr_schedule": {"kind": "constant", "eta": 0.1},
            "seed": 7,
            "iterations": 50
        }"#,
    );
    unsafe {
        let mut handle: *mut DetoxRunConfig = ptr::null_mut();
        assert_eq!(detox_config_new(json.as_ptr(), &mut handle), DetoxStatus::Ok);
        let mut p_hat = 0usize;
        assert_eq!(detox_config_p_hat(handle, &mut p_hat), DetoxStatus::Ok);
        assert_eq!(p_hat, 15);
        detox_config_free(handle);
    }
}

#[test]
fn config_rejects_structural_violations() {
    // r does not divide p
    let json = cstr(
        r#"{
            "p": 10, "q": 1, "r": 3, "b": 30, "k": 1, "d": 2,
            "agg0": {"kind": "mean"},
            "agg1": {"kind": "mean"},
            "attack": {"kind": "none"},
            "lr_schedule": {"kind": "constant", "eta": 0.1},
            "seed": 0,
            "iterations": 1
        }"#,
    );
    unsafe {
        let mut handle: *mut DetoxRunConfig = ptr::null_mut();
        assert_eq!(
            detox_config_new(json.as_ptr(), &mut handle),
            DetoxStatus::InvalidConfig
        );
        assert!(last_error().contains("divisibility"));
    }
}

#[test]
fn analysis_entry_points() {
    unsafe {
        let mut v = 0.0f64;
        assert_eq!(detox_exact_expected_qhat(12, 3, 3, &mut v), DetoxStatus::Ok);
        assert!((v - 28.0 / 55.0).abs() < 1e-15);

        assert_eq!(detox_qhat_upper_bound(2000, 40, 5, &mut v), DetoxStatus::Ok);
        assert!((v - 9.834496).abs() < 1e-9);

        assert_eq!(detox_confidence_threshold(0.1, &mut v), DetoxStatus::Ok);
        assert!((v - (1.0 + 2.0 * 10f64.ln())).abs() < 1e-12);

        assert_eq!(detox_tail_bound(12, 3, 3, 2.0, &mut v), DetoxStatus::Ok);
        assert!((v - 0.5f64.powf(28.0 / 55.0)).abs() < 1e-12);

        // precondition violation surfaces as a status, not a crash
        assert_eq!(
            detox_qhat_upper_bound(150, 5, 5, &mut v),
            DetoxStatus::AnalysisFailed
        );
        assert_eq!(detox_confidence_threshold(0.7, &mut v), DetoxStatus::AnalysisFailed);
    }
}

#[test]
fn generated_header_exports_symbols() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/detox.h"
    ))
    .expect("header generated by the build script");
    for symbol in [
        "detox_aggregator_new",
        "detox_aggregator_apply",
        "detox_aggregator_free",
        "detox_config_new",
        "detox_config_p_hat",
        "detox_config_free",
        "detox_exact_expected_qhat",
        "detox_qhat_upper_bound",
        "detox_confidence_threshold",
        "detox_tail_bound",
        "detox_last_error_message",
        "DetoxStatus",
    ] {
        assert!(header.contains(symbol), "missing {symbol}");
    }
}
