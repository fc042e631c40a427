//! C interface to stealkit.
//!
//! Every fallible function returns an [`SkStatus`]; on failure a message is
//! kept per thread and can be copied out with [`sk_last_error_message`].
//! Models and oracles are opaque handles released with their `_free`
//! functions. Strings handed out by the library are released with
//! [`sk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use stealkit::ensemble;
use stealkit::error::Error;
use stealkit::harness::{run_attack, ExperimentConfig};
use stealkit::netvictim::RemoteVictim;
use stealkit::numkit::{load_model, MlpModel};
use stealkit::selection;
use stealkit::victim::VictimOracle;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkStatus {
    Ok = 0,
    NullPointer = 1,
    RejectedInput = 2,
    RejectedConfig = 3,
    BudgetExhausted = 4,
    TrainingDiverged = 5,
    AttackFailed = 6,
    RemoteUnavailable = 7,
    RemoteInternal = 8,
    Io = 9,
    Format = 10,
    Panic = 11,
}

/// A trained classifier.
pub struct SkModel {
    model: MlpModel,
}

/// A budgeted hard-label victim, local or remote.
pub struct SkOracle {
    oracle: VictimOracle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SkStatus {
    match e.root() {
        Error::RejectedInput(_) => SkStatus::RejectedInput,
        Error::RejectedConfig(_) | Error::Json(_) => SkStatus::RejectedConfig,
        Error::TrainingDiverged { .. } => SkStatus::TrainingDiverged,
        Error::BudgetExhausted { .. } => SkStatus::BudgetExhausted,
        Error::AttackFailed(_) => SkStatus::AttackFailed,
        Error::RemoteUnavailable(_) => SkStatus::RemoteUnavailable,
        Error::RemoteInternal(_) => SkStatus::RemoteInternal,
        Error::Format(_) => SkStatus::Format,
        Error::Io(_) => SkStatus::Io,
        Error::Member { .. } | Error::Stage { .. } => unreachable!("root unwraps context"),
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guarded(f: impl FnOnce() -> Result<(), Fail>) -> SkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SkStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SkStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SkStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(unsafe { slice::from_raw_parts(p, n) })
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

unsafe fn str_in<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Lib(Error::RejectedInput(format!("{what} is not UTF-8"))))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in
/// bytes, or 0 if there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sk_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Shannon entropy (natural log) of a probability vector.
///
/// # Safety
/// `p` must point to `n` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn sk_entropy(p: *const f64, n: usize, out: *mut f64) -> SkStatus {
    guarded(|| {
        let p = unsafe { slice_in(p, n, "p") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = selection::entropy(p)?;
        Ok(())
    })
}

/// Entropy of the class-frequency vector of `k` member labels.
///
/// # Safety
/// `labels` must point to `k` values and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn sk_disagreement_entropy(
    labels: *const usize,
    k: usize,
    num_classes: usize,
    out: *mut f64,
) -> SkStatus {
    guarded(|| {
        let labels = unsafe { slice_in(labels, k, "labels") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = selection::entropy(&ensemble::disagreement_vector(labels, num_classes)?)?;
        Ok(())
    })
}

/// Majority vote over `k` member labels, falling back to the argmax of the
/// `num_classes`-long consensus distribution when no strict majority exists.
///
/// # Safety
/// `labels` must point to `k` values, `consensus` to `num_classes` doubles
/// and `out` to one writable value.
#[no_mangle]
pub unsafe extern "C" fn sk_majority_vote(
    labels: *const usize,
    k: usize,
    consensus: *const f64,
    num_classes: usize,
    out: *mut usize,
) -> SkStatus {
    guarded(|| {
        let labels = unsafe { slice_in(labels, k, "labels") }?;
        let consensus = unsafe { slice_in(consensus, num_classes, "consensus") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = ensemble::majority_vote(labels, consensus)?;
        Ok(())
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sk_model_load(path: *const c_char, out: *mut *mut SkModel) -> SkStatus {
    guarded(|| {
        let path = unsafe { str_in(path, "path") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let model = load_model(path)?;
        *out = Box::into_raw(Box::new(SkModel { model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`sk_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sk_model_free(model: *mut SkModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Input dimension of a model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_model_input_dim(model: *const SkModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.input_dim())
}

/// Number of classes of a model, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_model_num_classes(model: *const SkModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.model.num_classes())
}

/// Predicted class of one input row of length `dim`.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `dim` doubles and
/// `label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sk_model_predict(
    model: *const SkModel,
    x: *const f64,
    dim: usize,
    label: *mut usize,
) -> SkStatus {
    guarded(|| {
        let model = unsafe { model.as_ref() }.ok_or(Fail::Null("model"))?;
        let x = unsafe { slice_in(x, dim, "x") }?;
        let label = unsafe { out_ref(label, "label") }?;
        *label = model.model.predict_label(x)?;
        Ok(())
    })
}

/// Softmax probabilities of one row, written to `probs` (`num_classes` long).
///
/// # Safety
/// `model` must be a live handle, `x` must point to `dim` doubles and
/// `probs` to `num_classes` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_model_probs(
    model: *const SkModel,
    x: *const f64,
    dim: usize,
    probs: *mut f64,
    num_classes: usize,
) -> SkStatus {
    guarded(|| {
        let model = unsafe { model.as_ref() }.ok_or(Fail::Null("model"))?;
        let x = unsafe { slice_in(x, dim, "x") }?;
        if probs.is_null() {
            return Err(Fail::Null("probs"));
        }
        if num_classes != model.model.num_classes() {
            return Err(Error::RejectedInput(format!(
                "probs holds {num_classes} values, model has {} classes",
                model.model.num_classes()
            ))
            .into());
        }
        let p = model.model.softmax_probs(x)?;
        unsafe { slice::from_raw_parts_mut(probs, num_classes) }.copy_from_slice(&p);
        Ok(())
    })
}

/// An in-process oracle around a copy of `model` with `budget` queries.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sk_oracle_local(model: *const SkModel, budget: usize, out: *mut *mut SkOracle) -> SkStatus {
    guarded(|| {
        let model = unsafe { model.as_ref() }.ok_or(Fail::Null("model"))?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = Box::into_raw(Box::new(SkOracle {
            oracle: VictimOracle::in_process(model.model.clone(), budget),
        }));
        Ok(())
    })
}

/// An oracle backed by a running victim service at `endpoint`
/// (`host:port`), with a client-side budget of `budget` queries.
///
/// # Safety
/// `endpoint` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sk_oracle_connect(endpoint: *const c_char, budget: usize, out: *mut *mut SkOracle) -> SkStatus {
    guarded(|| {
        let endpoint = unsafe { str_in(endpoint, "endpoint") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = ptr::null_mut();
        let client = RemoteVictim::connect(endpoint)?;
        *out = Box::into_raw(Box::new(SkOracle {
            oracle: VictimOracle::remote(client, budget),
        }));
        Ok(())
    })
}

/// Releases an oracle. Null is ignored.
///
/// # Safety
/// `oracle` must come from an `sk_oracle_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sk_oracle_free(oracle: *mut SkOracle) {
    if !oracle.is_null() {
        drop(unsafe { Box::from_raw(oracle) });
    }
}

/// Remaining budget, or 0 for null.
///
/// # Safety
/// `oracle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_oracle_remaining(oracle: *const SkOracle) -> usize {
    unsafe { oracle.as_ref() }.map_or(0, |o| o.oracle.budget_remaining())
}

/// Labels `n_rows` row-major rows of width `dim`, charging one query each.
/// All or nothing: an over-budget request labels nothing.
///
/// # Safety
/// `oracle` must be a live handle, `rows` must point to `n_rows * dim`
/// doubles and `labels` to `n_rows` writable values.
#[no_mangle]
pub unsafe extern "C" fn sk_oracle_query(
    oracle: *mut SkOracle,
    rows: *const f64,
    n_rows: usize,
    dim: usize,
    labels: *mut usize,
) -> SkStatus {
    guarded(|| {
        let oracle = unsafe { oracle.as_mut() }.ok_or(Fail::Null("oracle"))?;
        let total = n_rows
            .checked_mul(dim)
            .ok_or_else(|| Error::RejectedInput("n_rows * dim overflows".into()))?;
        let flat = unsafe { slice_in(rows, total, "rows") }?;
        if n_rows > 0 && labels.is_null() {
            return Err(Fail::Null("labels"));
        }
        if dim == 0 && n_rows > 0 {
            return Err(Error::RejectedInput("dim must be positive".into()).into());
        }
        let refs: Vec<&[f64]> = if n_rows == 0 { Vec::new() } else { flat.chunks_exact(dim).collect() };
        let got = oracle.oracle.query_rows(&refs)?;
        if n_rows > 0 {
            unsafe { slice::from_raw_parts_mut(labels, n_rows) }.copy_from_slice(&got);
        }
        Ok(())
    })
}

/// Runs a full attack from a JSON experiment configuration. When
/// `out_dir` is non-null it overrides the configured output directory.
/// On success `*summary_json` receives the report as JSON, to be released
/// with [`sk_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string, `out_dir` null or
/// NUL-terminated, and `summary_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sk_run_attack(
    config_json: *const c_char,
    out_dir: *const c_char,
    summary_json: *mut *mut c_char,
) -> SkStatus {
    guarded(|| {
        let text = unsafe { str_in(config_json, "config_json") }?;
        let summary_json = unsafe { out_ref(summary_json, "summary_json") }?;
        *summary_json = ptr::null_mut();
        let mut cfg = ExperimentConfig::from_json(text)?;
        if !out_dir.is_null() {
            cfg.output_dir = Some(PathBuf::from(unsafe { str_in(out_dir, "out_dir") }?));
        }
        let out = run_attack(&cfg)?;
        let json = serde_json::to_string(&out.report).map_err(Error::from)?;
        *summary_json = CString::new(json).expect("json has no nul").into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
