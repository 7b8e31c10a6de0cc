//! C ABI over the authentree engine.
//!
//! Scenarios and reports are opaque handles owned by the library; release
//! them with the matching `*_free` function. Every fallible call returns an
//! [`AtStatus`] and, on failure, leaves a message retrievable with
//! [`at_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use authentree::config::ScenarioConfig;
use authentree::crypto::{hamming_distance_bytes, sha256};
use authentree::protocol::{authenticate_sip, AuthReport, Verdict};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Protocol = 4,
    OutOfRange = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtVerdict {
    Pass = 0,
    Fail = 1,
    Anomalous = 2,
}

impl From<Verdict> for AtVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => AtVerdict::Pass,
            Verdict::Fail => AtVerdict::Fail,
            Verdict::Anomalous => AtVerdict::Anomalous,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AtChipletSummary {
    pub id: u64,
    pub is_integrator: bool,
    pub verdict: AtVerdict,
    /// Whether fault localization produced a diagnosis for this chiplet.
    pub diagnosed: bool,
}

/// Parsed and validated scenario.
pub struct AtScenario(ScenarioConfig);

/// Outcome of one authentication session.
pub struct AtReport(AuthReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (AtStatus, String)>) -> AtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AtStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AtStatus::Panic
        }
    }
}

fn null() -> (AtStatus, String) {
    (AtStatus::NullArgument, "null argument".into())
}

/// Message for the most recent failure on this thread, or NULL.
///
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn at_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a scenario from NUL-terminated JSON.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn at_scenario_from_json(
    json: *const c_char,
    out: *mut *mut AtScenario,
) -> AtStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (AtStatus::InvalidUtf8, e.to_string()))?;
        let cfg = ScenarioConfig::from_json(text).map_err(|e| (AtStatus::Config, e.to_string()))?;
        *out = Box::into_raw(Box::new(AtScenario(cfg)));
        Ok(())
    })
}

/// Seed stored in the scenario, or `fallback` when it has none.
///
/// # Safety
/// `scenario` must be NULL or a live handle from [`at_scenario_from_json`].
#[no_mangle]
pub unsafe extern "C" fn at_scenario_seed(scenario: *const AtScenario, fallback: u64) -> u64 {
    scenario
        .as_ref()
        .map_or(fallback, |s| s.0.effective_seed(fallback))
}

/// # Safety
/// `scenario` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_scenario_free(scenario: *mut AtScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs one authentication session.
///
/// # Safety
/// `scenario` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn at_authenticate(
    scenario: *const AtScenario,
    seed: u64,
    out: *mut *mut AtReport,
) -> AtStatus {
    guard(|| {
        let cfg = &scenario.as_ref().ok_or_else(null)?.0;
        if out.is_null() {
            return Err(null());
        }
        let sip = cfg
            .build_sip(seed)
            .map_err(|e| (AtStatus::Config, e.to_string()))?;
        let report = authenticate_sip(&sip, &cfg.protocol, seed)
            .map_err(|e| (AtStatus::Protocol, e.to_string()))?;
        *out = Box::into_raw(Box::new(AtReport(report)));
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_report_free(report: *mut AtReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_report_all_authenticated(report: *const AtReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.all_authenticated())
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_report_critical_path_cycles(report: *const AtReport) -> u64 {
    report.as_ref().map_or(0, |r| r.0.critical_path_cycles)
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn at_report_chiplet_count(report: *const AtReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.chiplets.len())
}

/// Fills `out` with the chiplet at `index`, in id order.
///
/// # Safety
/// `report` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn at_report_chiplet(
    report: *const AtReport,
    index: usize,
    out: *mut AtChipletSummary,
) -> AtStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(null)?.0;
        let out = out.as_mut().ok_or_else(null)?;
        let c = r.chiplets.get(index).ok_or_else(|| {
            (
                AtStatus::OutOfRange,
                format!("chiplet index {index} out of range ({})", r.chiplets.len()),
            )
        })?;
        *out = AtChipletSummary {
            id: c.id,
            is_integrator: c.role == authentree::chiplet::Role::Integrator,
            verdict: c.verdict.into(),
            diagnosed: c.diagnosis.is_some(),
        };
        Ok(())
    })
}

/// Serializes the full report as pretty JSON. Free the result with
/// [`at_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn at_report_to_json(
    report: *const AtReport,
    out: *mut *mut c_char,
) -> AtStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(null)?.0;
        if out.is_null() {
            return Err(null());
        }
        let json = serde_json::to_string_pretty(r).map_err(|e| (AtStatus::Panic, e.to_string()))?;
        *out = CString::new(json).expect("json has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn at_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// SHA-256 of `len` bytes at `data` into the 32 bytes at `out`.
///
/// # Safety
/// `data` must be readable for `len` bytes (or may be NULL when `len` is 0)
/// and `out` writable for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn at_sha256(data: *const u8, len: usize, out: *mut u8) -> AtStatus {
    guard(|| {
        if out.is_null() || (data.is_null() && len > 0) {
            return Err(null());
        }
        let input = if len == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(data, len)
        };
        ptr::copy_nonoverlapping(sha256(input).as_bytes().as_ptr(), out, 32);
        Ok(())
    })
}

/// Number of differing bits between two `len`-byte buffers.
///
/// # Safety
/// `a` and `b` must each be readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn at_hamming_distance(
    a: *const u8,
    b: *const u8,
    len: usize,
    out: *mut u32,
) -> AtStatus {
    guard(|| {
        if out.is_null() || ((a.is_null() || b.is_null()) && len > 0) {
            return Err(null());
        }
        *out = if len == 0 {
            0
        } else {
            hamming_distance_bytes(slice::from_raw_parts(a, len), slice::from_raw_parts(b, len))
        };
        Ok(())
    })
}
