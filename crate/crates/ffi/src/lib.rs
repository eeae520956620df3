//! C ABI for the promptcal calibration library.
//!
//! Conventions:
//!
//! * Handles (`PcContract`, `PcProgram`, `PcPolicy`) are opaque; create them
//!   through `pc_*` constructors and release them with the matching `pc_*_free`.
//! * Every fallible call returns a [`PcStatus`]; on anything other than
//!   `PC_STATUS_OK` the thread-local error message is set and readable via
//!   [`pc_last_error_message`].
//! * Returned strings are NUL-terminated, UTF-8, owned by the caller, and
//!   must be released with [`pc_string_free`].
//!
//! The header `include/promptcal.h` is generated by cbindgen at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;

use libc::c_char;
use promptcal::artifact::{ArtifactError, CompiledProgram, load_artifact, save_artifact};
use promptcal::backend::{parse_fields, render_messages};
use promptcal::contract::TaskContract;
use promptcal::dataset::normalize_label;
use promptcal::evaluation::{ConfusionMatrix, compute_metrics};
use promptcal::metric::{
    MetricError, Prediction, ScoringPolicy, checks_format_ok, compact_metric,
    has_supporting_checks, utility_from_confusion,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    PcStatusOk = 0,
    /// A required pointer argument was NULL.
    PcStatusNullArgument = 1,
    /// A string argument was not valid UTF-8.
    PcStatusInvalidUtf8 = 2,
    /// Contract construction or validation failed.
    PcStatusContractError = 3,
    /// Metric preconditions were violated (bad gold label or policy).
    PcStatusMetricError = 4,
    /// File could not be read or written.
    PcStatusIoError = 5,
    /// Artifact schema or JSON was malformed.
    PcStatusFormatError = 6,
    /// Stored fingerprint did not match the recomputed fixed layers.
    PcStatusIntegrityError = 7,
    /// Statistics preconditions were violated (empty matrix).
    PcStatusEvalError = 8,
}

/// Opaque task contract handle.
pub struct PcContract(TaskContract);

/// Opaque compiled-program handle.
pub struct PcProgram(CompiledProgram);

/// Opaque scoring-policy handle.
pub struct PcPolicy(ScoringPolicy);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message.replace('\0', " ")).ok();
    });
}

fn to_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char) -> Result<&'a str, PcStatus> {
    if ptr.is_null() {
        set_error("required string argument is NULL");
        return Err(PcStatus::PcStatusNullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        PcStatus::PcStatusInvalidUtf8
    })
}

fn artifact_status(error: &ArtifactError) -> PcStatus {
    match error {
        ArtifactError::Io { .. } => PcStatus::PcStatusIoError,
        ArtifactError::Integrity(_) => PcStatus::PcStatusIntegrityError,
        _ => PcStatus::PcStatusFormatError,
    }
}

/// Last error message of the current thread, or NULL when no error has been
/// recorded. Free with `pc_string_free`.
#[unsafe(no_mangle)]
pub extern "C" fn pc_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|message| message.clone().into_raw())
            .unwrap_or(std::ptr::null_mut())
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `ptr` must be NULL or a pointer previously returned by this library and
/// not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_string_free(ptr: *mut c_char) {
    if !ptr.is_null() {
        drop(unsafe { CString::from_raw(ptr) });
    }
}

/// Library version as a string. Free with `pc_string_free`.
#[unsafe(no_mangle)]
pub extern "C" fn pc_version() -> *mut c_char {
    to_c_string(env!("CARGO_PKG_VERSION").to_string())
}

// ---------------------------------------------------------------------------
// Contracts
// ---------------------------------------------------------------------------

/// Parse and validate a contract document (see the contract file schema).
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be a valid
/// pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_contract_from_json(
    json: *const c_char,
    out: *mut *mut PcContract,
) -> PcStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let json = match unsafe { required_str(json) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    match TaskContract::from_json_str(json) {
        Ok(contract) => {
            unsafe { *out = Box::into_raw(Box::new(PcContract(contract))) };
            PcStatus::PcStatusOk
        }
        Err(error) => {
            set_error(error.to_string());
            PcStatus::PcStatusContractError
        }
    }
}

/// Serialize a contract to its JSON document. Free with `pc_string_free`.
///
/// # Safety
/// `contract` must be a live handle from this library.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_contract_to_json(contract: *const PcContract) -> *mut c_char {
    if contract.is_null() {
        set_error("contract handle is NULL");
        return std::ptr::null_mut();
    }
    to_c_string(unsafe { &(*contract).0 }.to_json_string())
}

/// A new contract sharing the fixed layers with `contract` and carrying
/// `harness` as its mutable layer.
///
/// # Safety
/// `contract` must be a live handle; `harness` a valid string; `out` valid.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_contract_with_harness(
    contract: *const PcContract,
    harness: *const c_char,
    out: *mut *mut PcContract,
) -> PcStatus {
    if contract.is_null() || out.is_null() {
        set_error("contract or out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let harness = match unsafe { required_str(harness) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    match unsafe { &(*contract).0 }.with_harness(harness) {
        Ok(next) => {
            unsafe { *out = Box::into_raw(Box::new(PcContract(next))) };
            PcStatus::PcStatusOk
        }
        Err(error) => {
            set_error(error.to_string());
            PcStatus::PcStatusContractError
        }
    }
}

/// The interface fingerprint (hex SHA-256 of the fixed layers). Free with
/// `pc_string_free`.
///
/// # Safety
/// `contract` must be a live handle from this library.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_contract_fingerprint(contract: *const PcContract) -> *mut c_char {
    if contract.is_null() {
        set_error("contract handle is NULL");
        return std::ptr::null_mut();
    }
    to_c_string(unsafe { &(*contract).0 }.interface_fingerprint().to_string())
}

/// The current harness text. Free with `pc_string_free`.
///
/// # Safety
/// `contract` must be a live handle from this library.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_contract_harness(contract: *const PcContract) -> *mut c_char {
    if contract.is_null() {
        set_error("contract handle is NULL");
        return std::ptr::null_mut();
    }
    to_c_string(unsafe { &(*contract).0 }.harness_text().to_string())
}

/// Release a contract handle.
///
/// # Safety
/// `contract` must be NULL or a live handle, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_contract_free(contract: *mut PcContract) {
    if !contract.is_null() {
        drop(unsafe { Box::from_raw(contract) });
    }
}

// ---------------------------------------------------------------------------
// Policies and metrics
// ---------------------------------------------------------------------------

/// The shipped default policy (fp_score 0.4, checks cap 0.6, positive label
/// "include").
///
/// # Safety
/// `out` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_policy_default(out: *mut *mut PcPolicy) -> PcStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    unsafe { *out = Box::into_raw(Box::new(PcPolicy(ScoringPolicy::default()))) };
    PcStatus::PcStatusOk
}

/// A policy with custom fp_score and checks cap; other constants keep their
/// defaults. Rejects orderings that violate the policy invariants.
///
/// # Safety
/// `out` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_policy_new(
    fp_score: f64,
    checks_cap: f64,
    out: *mut *mut PcPolicy,
) -> PcStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let policy = ScoringPolicy {
        false_positive_score: fp_score,
        checks_cap,
        ..ScoringPolicy::default()
    };
    if let Err(error) = policy.validate() {
        set_error(error.to_string());
        return PcStatus::PcStatusMetricError;
    }
    unsafe { *out = Box::into_raw(Box::new(PcPolicy(policy))) };
    PcStatus::PcStatusOk
}

/// Release a policy handle.
///
/// # Safety
/// `policy` must be NULL or a live handle, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_policy_free(policy: *mut PcPolicy) {
    if !policy.is_null() {
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Normalize a label token (trim, lowercase, fold participle forms). Free
/// the result with `pc_string_free`.
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_normalize_label(text: *const c_char) -> *mut c_char {
    match unsafe { required_str(text) } {
        Ok(text) => to_c_string(normalize_label(text)),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Strict audit-trace validation: 2-5 bounded bullet lines, 30 words max.
///
/// # Safety
/// `checks` must be a valid string; `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_checks_format_ok(checks: *const c_char, out: *mut bool) -> PcStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    match unsafe { required_str(checks) } {
        Ok(checks) => {
            unsafe { *out = checks_format_ok(checks) };
            PcStatus::PcStatusOk
        }
        Err(status) => status,
    }
}

/// Minimal audit-trace validation: at least three words of checks.
///
/// # Safety
/// `checks` must be a valid string; `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_has_supporting_checks(
    checks: *const c_char,
    out: *mut bool,
) -> PcStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    match unsafe { required_str(checks) } {
        Ok(checks) => {
            let prediction = Prediction::new("", checks);
            unsafe { *out = has_supporting_checks(&prediction) };
            PcStatus::PcStatusOk
        }
        Err(status) => status,
    }
}

/// Score one prediction with the compact asymmetric metric. On success
/// `out_score` holds the score and, when non-NULL, `out_feedback` holds the
/// feedback text (free with `pc_string_free`).
///
/// # Safety
/// String arguments must be valid; `policy` a live handle; `out_score` valid.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_compact_metric(
    gold_label: *const c_char,
    predicted_label: *const c_char,
    checks: *const c_char,
    policy: *const PcPolicy,
    out_score: *mut f64,
    out_feedback: *mut *mut c_char,
) -> PcStatus {
    if policy.is_null() || out_score.is_null() {
        set_error("policy or out_score pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let gold = match unsafe { required_str(gold_label) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    let label = match unsafe { required_str(predicted_label) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    let checks = match unsafe { required_str(checks) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    let prediction = Prediction::new(label, checks);
    match compact_metric(gold, &prediction, unsafe { &(*policy).0 }) {
        Ok(outcome) => {
            unsafe { *out_score = outcome.score };
            if !out_feedback.is_null() {
                unsafe { *out_feedback = to_c_string(outcome.feedback) };
            }
            PcStatus::PcStatusOk
        }
        Err(error) => {
            set_error(error.to_string());
            PcStatus::PcStatusMetricError
        }
    }
}

/// Label-level asymmetric utility `(TP + TN + fp_score * FP) / N`.
///
/// # Safety
/// `out` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_utility_from_confusion(
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    fp_score: f64,
    out: *mut f64,
) -> PcStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let cm = ConfusionMatrix::from_counts(tp, fp, tn, fn_);
    match utility_from_confusion(&cm, fp_score) {
        Ok(utility) => {
            unsafe { *out = utility };
            PcStatus::PcStatusOk
        }
        Err(error @ MetricError::EmptyConfusionMatrix) => {
            set_error(error.to_string());
            PcStatus::PcStatusEvalError
        }
        Err(error) => {
            set_error(error.to_string());
            PcStatus::PcStatusMetricError
        }
    }
}

/// Full derived statistics of a confusion matrix as a JSON object (absent
/// statistics are null). Free with `pc_string_free`.
///
/// # Safety
/// `out_json` must be a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_run_metrics_json(
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    fp_score: f64,
    out_json: *mut *mut c_char,
) -> PcStatus {
    if out_json.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let policy = ScoringPolicy {
        false_positive_score: fp_score,
        ..ScoringPolicy::default()
    };
    if let Err(error) = policy.validate() {
        set_error(error.to_string());
        return PcStatus::PcStatusMetricError;
    }
    let cm = ConfusionMatrix::from_counts(tp, fp, tn, fn_);
    match compute_metrics(&cm, &policy) {
        Ok(metrics) => {
            let json = serde_json::to_string(&metrics).expect("metrics serialize");
            unsafe { *out_json = to_c_string(json) };
            PcStatus::PcStatusOk
        }
        Err(error) => {
            set_error(error.to_string());
            PcStatus::PcStatusEvalError
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering and parsing
// ---------------------------------------------------------------------------

/// Render the (system, user) message texts for one screening example. Both
/// outputs are freed with `pc_string_free`.
///
/// # Safety
/// `contract` must be a live handle; strings valid; out pointers valid.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_render_messages(
    contract: *const PcContract,
    criteria: *const c_char,
    title: *const c_char,
    abstract_text: *const c_char,
    out_system: *mut *mut c_char,
    out_user: *mut *mut c_char,
) -> PcStatus {
    if contract.is_null() || out_system.is_null() || out_user.is_null() {
        set_error("contract or out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let mut inputs = std::collections::BTreeMap::new();
    for (name, ptr) in [("criteria", criteria), ("title", title), ("abstract", abstract_text)] {
        match unsafe { required_str(ptr) } {
            Ok(value) => inputs.insert(name.to_string(), value.to_string()),
            Err(status) => return status,
        };
    }
    match render_messages(unsafe { &(*contract).0 }, &inputs) {
        Ok((system, user)) => {
            unsafe {
                *out_system = to_c_string(system);
                *out_user = to_c_string(user);
            }
            PcStatus::PcStatusOk
        }
        Err(error) => {
            set_error(error.to_string());
            PcStatus::PcStatusContractError
        }
    }
}

/// Parse a marker-delimited model response. `out_parse_ok` is false when the
/// decision marker is absent (the metric scores that as invalid). Both
/// strings are freed with `pc_string_free`.
///
/// # Safety
/// `contract` must be a live handle; `response` valid; out pointers valid.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_parse_fields(
    response: *const c_char,
    contract: *const PcContract,
    out_checks: *mut *mut c_char,
    out_label: *mut *mut c_char,
    out_parse_ok: *mut bool,
) -> PcStatus {
    if contract.is_null() || out_checks.is_null() || out_label.is_null() || out_parse_ok.is_null() {
        set_error("contract or out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let response = match unsafe { required_str(response) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    let prediction = parse_fields(response, unsafe { &(*contract).0 });
    unsafe {
        *out_checks = to_c_string(prediction.checks);
        *out_label = to_c_string(prediction.label_raw);
        *out_parse_ok = prediction.parse_ok;
    }
    PcStatus::PcStatusOk
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Load a compiled-program artifact, re-validating the contract fingerprint.
///
/// # Safety
/// `path` must be a valid string; `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_program_load(
    path: *const c_char,
    out: *mut *mut PcProgram,
) -> PcStatus {
    if out.is_null() {
        set_error("out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let path = match unsafe { required_str(path) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    match load_artifact(Path::new(path)) {
        Ok(program) => {
            unsafe { *out = Box::into_raw(Box::new(PcProgram(program))) };
            PcStatus::PcStatusOk
        }
        Err(error) => {
            let status = artifact_status(&error);
            set_error(error.to_string());
            status
        }
    }
}

/// Save a program canonically; when non-NULL, `out_digest` receives the hex
/// content digest (free with `pc_string_free`).
///
/// # Safety
/// `program` must be a live handle; `path` valid.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_program_save(
    program: *const PcProgram,
    path: *const c_char,
    out_digest: *mut *mut c_char,
) -> PcStatus {
    if program.is_null() {
        set_error("program handle is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let path = match unsafe { required_str(path) } {
        Ok(text) => text,
        Err(status) => return status,
    };
    match save_artifact(unsafe { &(*program).0 }, Path::new(path)) {
        Ok(digest) => {
            if !out_digest.is_null() {
                unsafe { *out_digest = to_c_string(digest) };
            }
            PcStatus::PcStatusOk
        }
        Err(error) => {
            let status = artifact_status(&error);
            set_error(error.to_string());
            status
        }
    }
}

/// A contract handle cloned out of a program (free separately).
///
/// # Safety
/// `program` must be a live handle; `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_program_contract(
    program: *const PcProgram,
    out: *mut *mut PcContract,
) -> PcStatus {
    if program.is_null() || out.is_null() {
        set_error("program or out pointer is NULL");
        return PcStatus::PcStatusNullArgument;
    }
    let contract = unsafe { &(*program).0 }.contract.clone();
    unsafe { *out = Box::into_raw(Box::new(PcContract(contract))) };
    PcStatus::PcStatusOk
}

/// Release a program handle.
///
/// # Safety
/// `program` must be NULL or a live handle, not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_program_free(program: *mut PcProgram) {
    if !program.is_null() {
        drop(unsafe { Box::from_raw(program) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cstr(text: &str) -> CString {
        CString::new(text).unwrap()
    }

    fn read_and_free(ptr: *mut c_char) -> String {
        assert!(!ptr.is_null());
        let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_string();
        unsafe { pc_string_free(ptr) };
        text
    }

    fn demo_contract_json() -> CString {
        cstr(
            &serde_json::json!({
                "contract_id": "abstract-screening",
                "criteria_text": "keep empirical defect prediction studies",
                "input_fields": [
                    {"name": "criteria", "description": "c", "role": "input"},
                    {"name": "title", "description": "t", "role": "input"},
                    {"name": "abstract", "description": "a", "role": "input"}
                ],
                "output_fields": [
                    {"name": "checks", "description": "f", "role": "output",
                     "constraint": "free_text"},
                    {"name": "label", "description": "d", "role": "output",
                     "constraint": {"token_set": ["include", "exclude"]}}
                ],
                "harness_text": "screen the records"
            })
            .to_string(),
        )
    }

    fn make_contract() -> *mut PcContract {
        let mut handle: *mut PcContract = std::ptr::null_mut();
        let status = unsafe { pc_contract_from_json(demo_contract_json().as_ptr(), &mut handle) };
        assert_eq!(status, PcStatus::PcStatusOk);
        handle
    }

    #[test]
    fn contract_round_trip_and_fingerprint_stability() {
        let contract = make_contract();
        let fingerprint = read_and_free(unsafe { pc_contract_fingerprint(contract) });
        assert_eq!(fingerprint.len(), 64);

        let mut rewritten: *mut PcContract = std::ptr::null_mut();
        let harness = cstr("a far better harness");
        let status =
            unsafe { pc_contract_with_harness(contract, harness.as_ptr(), &mut rewritten) };
        assert_eq!(status, PcStatus::PcStatusOk);
        let fingerprint2 = read_and_free(unsafe { pc_contract_fingerprint(rewritten) });
        assert_eq!(fingerprint, fingerprint2);
        assert_eq!(
            read_and_free(unsafe { pc_contract_harness(rewritten) }),
            "a far better harness"
        );

        let json = read_and_free(unsafe { pc_contract_to_json(contract) });
        assert!(json.contains("abstract-screening"));
        unsafe {
            pc_contract_free(contract);
            pc_contract_free(rewritten);
        }
    }

    #[test]
    fn invalid_contract_sets_error_message() {
        let mut handle: *mut PcContract = std::ptr::null_mut();
        let bad = cstr("{\"criteria_text\": \"\"}");
        let status = unsafe { pc_contract_from_json(bad.as_ptr(), &mut handle) };
        assert_eq!(status, PcStatus::PcStatusContractError);
        let message = read_and_free(pc_last_error_message());
        assert!(!message.is_empty());
    }

    #[test]
    fn metric_matches_the_asymmetric_table() {
        let mut policy: *mut PcPolicy = std::ptr::null_mut();
        assert_eq!(unsafe { pc_policy_default(&mut policy) }, PcStatus::PcStatusOk);
        let cases = [
            ("include", "include", 1.0),
            ("exclude", "exclude", 1.0),
            ("include", "exclude", 0.0),
            ("exclude", "include", 0.4),
        ];
        for (gold, predicted, expected) in cases {
            let mut score = f64::NAN;
            let mut feedback: *mut c_char = std::ptr::null_mut();
            let status = unsafe {
                pc_compact_metric(
                    cstr(gold).as_ptr(),
                    cstr(predicted).as_ptr(),
                    cstr("defect prediction with ML evaluation").as_ptr(),
                    policy,
                    &mut score,
                    &mut feedback,
                )
            };
            assert_eq!(status, PcStatus::PcStatusOk);
            assert_eq!(score, expected);
            assert!(!read_and_free(feedback).is_empty());
        }
        // Bad gold labels surface as metric errors.
        let mut score = 0.0;
        let status = unsafe {
            pc_compact_metric(
                cstr("maybe").as_ptr(),
                cstr("include").as_ptr(),
                cstr("a b c").as_ptr(),
                policy,
                &mut score,
                std::ptr::null_mut(),
            )
        };
        assert_eq!(status, PcStatus::PcStatusMetricError);
        unsafe { pc_policy_free(policy) };
    }

    #[test]
    fn policy_ordering_is_validated() {
        let mut policy: *mut PcPolicy = std::ptr::null_mut();
        assert_eq!(
            unsafe { pc_policy_new(1.5, 0.6, &mut policy) },
            PcStatus::PcStatusMetricError
        );
        assert_eq!(unsafe { pc_policy_new(0.2, 0.6, &mut policy) }, PcStatus::PcStatusOk);
        unsafe { pc_policy_free(policy) };
    }

    #[test]
    fn utility_and_metrics_reproduce_published_values() {
        let mut utility = 0.0;
        let status =
            unsafe { pc_utility_from_confusion(599, 158, 250, 69, 0.4, &mut utility) };
        assert_eq!(status, PcStatus::PcStatusOk);
        assert!((utility - 0.847).abs() < 1e-3);

        let mut json: *mut c_char = std::ptr::null_mut();
        let status = unsafe { pc_run_metrics_json(599, 158, 250, 69, 0.4, &mut json) };
        assert_eq!(status, PcStatus::PcStatusOk);
        let value: serde_json::Value = serde_json::from_str(&read_and_free(json)).unwrap();
        assert!((value["accuracy"].as_f64().unwrap() - 0.788).abs() < 0.01);
        assert!((value["mcc"].as_f64().unwrap() - 0.539).abs() < 0.01);

        let mut empty = 0.0;
        assert_eq!(
            unsafe { pc_utility_from_confusion(0, 0, 0, 0, 0.4, &mut empty) },
            PcStatus::PcStatusEvalError
        );
    }

    #[test]
    fn render_and_parse_round_trip_through_the_abi() {
        let contract = make_contract();
        let mut system: *mut c_char = std::ptr::null_mut();
        let mut user: *mut c_char = std::ptr::null_mut();
        let status = unsafe {
            pc_render_messages(
                contract,
                cstr("the criteria").as_ptr(),
                cstr("the title").as_ptr(),
                cstr("the abstract").as_ptr(),
                &mut system,
                &mut user,
            )
        };
        assert_eq!(status, PcStatus::PcStatusOk);
        assert!(read_and_free(system).contains("[[ ## label ## ]]"));
        assert!(read_and_free(user).contains("title: the title"));

        let response = cstr(
            "[[ ## checks ## ]]\n- a b\n- c d\n[[ ## label ## ]]\ninclude\n[[ ## completed ## ]]",
        );
        let mut checks: *mut c_char = std::ptr::null_mut();
        let mut label: *mut c_char = std::ptr::null_mut();
        let mut parse_ok = false;
        let status = unsafe {
            pc_parse_fields(response.as_ptr(), contract, &mut checks, &mut label, &mut parse_ok)
        };
        assert_eq!(status, PcStatus::PcStatusOk);
        assert!(parse_ok);
        assert_eq!(read_and_free(checks), "- a b\n- c d");
        assert_eq!(read_and_free(label), "include");
        unsafe { pc_contract_free(contract) };
    }

    #[test]
    fn validators_cross_the_abi() {
        let mut ok = false;
        let status = unsafe {
            pc_checks_format_ok(cstr("- a b c\n- d e f").as_ptr(), &mut ok)
        };
        assert_eq!(status, PcStatus::PcStatusOk);
        assert!(ok);
        unsafe { pc_checks_format_ok(cstr("").as_ptr(), &mut ok) };
        assert!(!ok);
        unsafe { pc_has_supporting_checks(cstr("a b c").as_ptr(), &mut ok) };
        assert!(ok);
        unsafe { pc_has_supporting_checks(cstr("yes").as_ptr(), &mut ok) };
        assert!(!ok);

        let normalized = read_and_free(unsafe { pc_normalize_label(cstr(" Included ").as_ptr()) });
        assert_eq!(normalized, "include");
    }

    #[test]
    fn artifact_save_load_and_integrity_over_the_abi() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("program.json");
        let path_c = cstr(path.to_str().unwrap());

        // Build a program through the Rust API, save/load through the ABI.
        let contract = make_contract();
        let program = CompiledProgram::new(
            unsafe { &(*contract).0 }.clone(),
            promptcal::backend::GenerationSettings::student("mock/student"),
        );
        let handle = Box::into_raw(Box::new(PcProgram(program)));
        let mut digest: *mut c_char = std::ptr::null_mut();
        let status = unsafe { pc_program_save(handle, path_c.as_ptr(), &mut digest) };
        assert_eq!(status, PcStatus::PcStatusOk);
        assert_eq!(read_and_free(digest).len(), 64);

        let mut reloaded: *mut PcProgram = std::ptr::null_mut();
        assert_eq!(
            unsafe { pc_program_load(path_c.as_ptr(), &mut reloaded) },
            PcStatus::PcStatusOk
        );
        let mut loaded_contract: *mut PcContract = std::ptr::null_mut();
        assert_eq!(
            unsafe { pc_program_contract(reloaded, &mut loaded_contract) },
            PcStatus::PcStatusOk
        );
        assert_eq!(
            read_and_free(unsafe { pc_contract_fingerprint(loaded_contract) }),
            read_and_free(unsafe { pc_contract_fingerprint(contract) }),
        );

        // Tampering with fixed layers is an integrity error.
        let tampered = std::fs::read_to_string(&path)
            .unwrap()
            .replace("keep empirical defect prediction studies", "tampered criteria");
        std::fs::write(&path, tampered).unwrap();
        let mut broken: *mut PcProgram = std::ptr::null_mut();
        assert_eq!(
            unsafe { pc_program_load(path_c.as_ptr(), &mut broken) },
            PcStatus::PcStatusIntegrityError
        );
        let message = read_and_free(pc_last_error_message());
        assert!(message.contains("fingerprint"), "{message}");

        unsafe {
            pc_contract_free(contract);
            pc_contract_free(loaded_contract);
            pc_program_free(reloaded);
            pc_program_free(handle);
        }
    }

    #[test]
    fn null_arguments_are_rejected_not_crashed() {
        let mut out: *mut PcContract = std::ptr::null_mut();
        assert_eq!(
            unsafe { pc_contract_from_json(std::ptr::null(), &mut out) },
            PcStatus::PcStatusNullArgument
        );
        assert!(unsafe { pc_contract_to_json(std::ptr::null()) }.is_null());
        let mut score = 0.0;
        assert_eq!(
            unsafe {
                pc_compact_metric(
                    cstr("include").as_ptr(),
                    cstr("include").as_ptr(),
                    cstr("a b c").as_ptr(),
                    std::ptr::null(),
                    &mut score,
                    std::ptr::null_mut(),
                )
            },
            PcStatus::PcStatusNullArgument
        );
        unsafe {
            pc_contract_free(std::ptr::null_mut());
            pc_program_free(std::ptr::null_mut());
            pc_string_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn generated_header_declares_the_surface() {
        let header = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("include/promptcal.h"),
        )
        .expect("cbindgen wrote the header during build");
        for declaration in [
            "PROMPTCAL_H",
            "PcStatus",
            "PcContract",
            "PcProgram",
            "PcPolicy",
            "pc_last_error_message",
            "pc_string_free",
            "pc_contract_from_json",
            "pc_contract_with_harness",
            "pc_contract_fingerprint",
            "pc_compact_metric",
            "pc_utility_from_confusion",
            "pc_parse_fields",
            "pc_render_messages",
            "pc_program_load",
            "pc_program_save",
        ] {
            assert!(header.contains(declaration), "header misses {declaration}");
        }
    }
}
