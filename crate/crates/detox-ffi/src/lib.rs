//! C ABI over the aggregation and filter-analysis engine.
//!
//! Conventions: every fallible call returns a [`DetoxStatus`] and writes its
//! result through an out pointer. Handles are opaque; free them with the
//! matching `_free` function. On any non-OK status the calling thread can
//! fetch a human-readable message via [`detox_last_error_message`], valid
//! until the next failing call on that thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use detox_core::aggregators::AggregatorSpec;
use detox_core::analysis;
use detox_core::config::DetoxConfig;
use detox_core::types::GradVec;

/// Result code of every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetoxStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// JSON parsing failed or the value violated a structural constraint.
    InvalidConfig = 3,
    /// The aggregation itself failed (bad dimensions, too few vectors, ...).
    AggregationFailed = 4,
    /// An analysis precondition was violated.
    AnalysisFailed = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let msg = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(msg).expect("no interior nul");
    });
}

/// Message of the last failing call on this thread. The pointer stays valid
/// until the next failing call on the same thread; never free it.
#[no_mangle]
pub extern "C" fn detox_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque aggregator handle.
pub struct DetoxAggregator {
    spec: AggregatorSpec,
}

/// Opaque validated run configuration handle.
pub struct DetoxRunConfig {
    cfg: DetoxConfig,
}

unsafe fn read_json<'a>(json: *const c_char) -> Result<&'a str, DetoxStatus> {
    if json.is_null() {
        set_error("json argument is null");
        return Err(DetoxStatus::NullPointer);
    }
    CStr::from_ptr(json).to_str().map_err(|e| {
        set_error(e);
        DetoxStatus::InvalidUtf8
    })
}

/// Build an aggregator from its JSON spec, e.g. `{"kind":"coord_median"}` or
/// `{"kind":"krum","q":2}`. On success writes a handle to `out`.
///
/// # Safety
/// `json` must point to a nul-terminated string and `out` to writable memory.
#[no_mangle]
pub unsafe extern "C" fn detox_aggregator_new(
    json: *const c_char,
    out: *mut *mut DetoxAggregator,
) -> DetoxStatus {
    if out.is_null() {
        set_error("out argument is null");
        return DetoxStatus::NullPointer;
    }
    let text = match read_json(json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let spec: AggregatorSpec = match serde_json::from_str(text) {
        Ok(s) => s,
        Err(e) => {
            set_error(e);
            return DetoxStatus::InvalidConfig;
        }
    };
    if let Err(e) = spec.validate() {
        set_error(e);
        return DetoxStatus::InvalidConfig;
    }
    *out = Box::into_raw(Box::new(DetoxAggregator { spec }));
    DetoxStatus::Ok
}

/// Aggregate `n_vectors` row-major vectors of length `dim` from `data` and
/// write the `dim` result entries to `out`.
///
/// # Safety
/// `data` must hold `n_vectors * dim` readable doubles, `out` `dim` writable
/// doubles, and `agg` must be a live handle from [`detox_aggregator_new`].
#[no_mangle]
pub unsafe extern "C" fn detox_aggregator_apply(
    agg: *const DetoxAggregator,
    data: *const f64,
    n_vectors: usize,
    dim: usize,
    out: *mut f64,
) -> DetoxStatus {
    if agg.is_null() || data.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DetoxStatus::NullPointer;
    }
    if n_vectors == 0 || dim == 0 {
        set_error("n_vectors and dim must be positive");
        return DetoxStatus::AggregationFailed;
    }
    let flat = std::slice::from_raw_parts(data, n_vectors * dim);
    let mut vectors = Vec::with_capacity(n_vectors);
    for row in flat.chunks(dim) {
        match GradVec::new(row.to_vec()) {
            Ok(v) => vectors.push(v),
            Err(e) => {
                set_error(e);
                return DetoxStatus::AggregationFailed;
            }
        }
    }
    match (*agg).spec.apply(&vectors) {
        Ok(result) => {
            ptr::copy_nonoverlapping(result.as_slice().as_ptr(), out, dim);
            DetoxStatus::Ok
        }
        Err(e) => {
            set_error(e);
            DetoxStatus::AggregationFailed
        }
    }
}

/// # Safety
/// `agg` must come from [`detox_aggregator_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn detox_aggregator_free(agg: *mut DetoxAggregator) {
    if !agg.is_null() {
        drop(Box::from_raw(agg));
    }
}

/// Parse and validate a full run configuration from JSON.
///
/// # Safety
/// `json` must point to a nul-terminated string and `out` to writable memory.
#[no_mangle]
pub unsafe extern "C" fn detox_config_new(
    json: *const c_char,
    out: *mut *mut DetoxRunConfig,
) -> DetoxStatus {
    if out.is_null() {
        set_error("out argument is null");
        return DetoxStatus::NullPointer;
    }
    let text = match read_json(json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let cfg: DetoxConfig = match serde_json::from_str(text) {
        Ok(c) => c,
        Err(e) => {
            set_error(e);
            return DetoxStatus::InvalidConfig;
        }
    };
    if let Err(e) = cfg.validate() {
        set_error(e);
        return DetoxStatus::InvalidConfig;
    }
    *out = Box::into_raw(Box::new(DetoxRunConfig { cfg }));
    DetoxStatus::Ok
}

/// Number of votes p/r of a validated configuration.
///
/// # Safety
/// `cfg` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn detox_config_p_hat(
    cfg: *const DetoxRunConfig,
    out: *mut usize,
) -> DetoxStatus {
    if cfg.is_null() || out.is_null() {
        set_error("null pointer argument");
        return DetoxStatus::NullPointer;
    }
    *out = (*cfg).cfg.p_hat();
    DetoxStatus::Ok
}

/// # Safety
/// `cfg` must come from [`detox_config_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn detox_config_free(cfg: *mut DetoxRunConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

fn analysis_out(res: Result<f64, analysis::AnalysisError>, out: *mut f64) -> DetoxStatus {
    if out.is_null() {
        set_error("out argument is null");
        return DetoxStatus::NullPointer;
    }
    match res {
        Ok(v) => {
            unsafe { *out = v };
            DetoxStatus::Ok
        }
        Err(e) => {
            set_error(e);
            DetoxStatus::AnalysisFailed
        }
    }
}

/// Exact expected number of Byzantine votes surviving the filter.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn detox_exact_expected_qhat(
    p: usize,
    q: usize,
    r: usize,
    out: *mut f64,
) -> DetoxStatus {
    analysis_out(analysis::exact_expected_qhat(p, q, r), out)
}

/// Closed-form filtering bound for r > 3, p >= 2r, q/p < 1/40.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn detox_qhat_upper_bound(
    p: usize,
    q: usize,
    r: usize,
    out: *mut f64,
) -> DetoxStatus {
    analysis_out(analysis::qhat_upper_bound(p, q, r), out)
}

/// High-probability surviving-vote threshold 1 + 2 ln(1/delta).
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn detox_confidence_threshold(delta: f64, out: *mut f64) -> DetoxStatus {
    analysis_out(analysis::confidence_threshold(delta), out)
}

/// Tail bound on deviating by a (1 + theta) factor above the expectation.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn detox_tail_bound(
    p: usize,
    q: usize,
    r: usize,
    theta: f64,
    out: *mut f64,
) -> DetoxStatus {
    analysis_out(analysis::tail_bound(p, q, r, theta), out)
}
