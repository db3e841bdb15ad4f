//! C ABI over the spkeval toolkit.
//!
//! Every call returns an [`SpkStatus`]; results go through out-pointers.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. On failure the message for the calling thread
//! is available from [`spk_last_error`] until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spkeval::calibration::{self, CalibrationModel, TrainOptions};
use spkeval::{io, metrics, Error, LlrSet, ScoreSet, TrialSet};

/// Result codes shared by all entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Syntax = 4,
    Validation = 5,
    Coverage = 6,
    Degenerate = 7,
    InvalidParams = 8,
    Panic = 9,
}

/// Trial key loaded from a key TSV file.
pub struct SpkTrialSet(TrialSet);

/// Raw scores of one system.
pub struct SpkScoreSet(ScoreSet);

/// Calibrated log likelihood ratios.
pub struct SpkLlrSet(LlrSet);

/// Trained calibration or fusion model.
pub struct SpkModel(CalibrationModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(SpkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Syntax { .. } | Error::Header { .. } => SpkStatus::Syntax,
            Error::Io(_) => SpkStatus::Io,
            Error::CoverageMismatch(_) | Error::UnknownTrialId(_) => SpkStatus::Coverage,
            Error::DegenerateKey | Error::EmptyInput => SpkStatus::Degenerate,
            Error::InvalidParams(_) => SpkStatus::InvalidParams,
            _ => SpkStatus::Validation,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SpkStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpkStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            SpkStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SpkStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn as_slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn open(path: &str) -> Result<BufReader<File>, Fail> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Fail(SpkStatus::Io, format!("{path}: {e}")))
}

fn stem(path: &str) -> String {
    PathBuf::from(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "system".to_string())
}

unsafe fn score_sets<'a>(sets: *const *const SpkScoreSet, n: usize) -> Result<Vec<&'a ScoreSet>, Fail> {
    if n == 0 {
        return Err(Fail(SpkStatus::InvalidParams, "no score sets given".to_string()));
    }
    if sets.is_null() {
        return Err(null("score set array"));
    }
    std::slice::from_raw_parts(sets, n)
        .iter()
        .map(|&p| as_ref(p, "score set").map(|s| &s.0))
        .collect()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a trial key file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn spk_trialset_load(path: *const c_char, out: *mut *mut SpkTrialSet) -> SpkStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let key = io::parse_key(open(path)?)?;
        put(out, Box::into_raw(Box::new(SpkTrialSet(key))), "out")
    })
}

/// Number of trials in the key.
///
/// # Safety
/// `key` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spk_trialset_len(key: *const SpkTrialSet) -> usize {
    key.as_ref().map_or(0, |k| k.0.len())
}

/// # Safety
/// `key` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spk_trialset_free(key: *mut SpkTrialSet) {
    if !key.is_null() {
        drop(Box::from_raw(key));
    }
}

/// Loads a raw score file. A null `system_id` uses the file stem.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_scoreset_load(
    path: *const c_char,
    system_id: *const c_char,
    out: *mut *mut SpkScoreSet,
) -> SpkStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let id = if system_id.is_null() { stem(path) } else { as_str(system_id, "system_id")?.to_string() };
        let scores = io::parse_scores(open(path)?, &id)?;
        put(out, Box::into_raw(Box::new(SpkScoreSet(scores))), "out")
    })
}

/// # Safety
/// `scores` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spk_scoreset_len(scores: *const SpkScoreSet) -> usize {
    scores.as_ref().map_or(0, |s| s.0.scores.len())
}

/// # Safety
/// `scores` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spk_scoreset_free(scores: *mut SpkScoreSet) {
    if !scores.is_null() {
        drop(Box::from_raw(scores));
    }
}

/// Loads an LLR file. A null `system_id` uses the file stem.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_llrset_load(
    path: *const c_char,
    system_id: *const c_char,
    out: *mut *mut SpkLlrSet,
) -> SpkStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let id = if system_id.is_null() { stem(path) } else { as_str(system_id, "system_id")?.to_string() };
        let llrs = io::parse_llrs(open(path)?, &id)?;
        put(out, Box::into_raw(Box::new(SpkLlrSet(llrs))), "out")
    })
}

/// Writes LLRs in the score-file format.
///
/// # Safety
/// `llrs` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn spk_llrset_save(llrs: *const SpkLlrSet, path: *const c_char) -> SpkStatus {
    guard(|| {
        let llrs = as_ref(llrs, "llrs")?;
        let path = as_str(path, "path")?;
        let f = File::create(path).map_err(|e| Fail(SpkStatus::Io, format!("{path}: {e}")))?;
        io::write_llrs(&llrs.0, BufWriter::new(f))?;
        Ok(())
    })
}

/// Looks up the LLR of one trial.
///
/// # Safety
/// `llrs` must be a live handle, `trial_id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_llrset_get(
    llrs: *const SpkLlrSet,
    trial_id: *const c_char,
    out: *mut f64,
) -> SpkStatus {
    guard(|| {
        let llrs = as_ref(llrs, "llrs")?;
        let id = as_str(trial_id, "trial_id")?;
        let v = *llrs.0.llrs.get(id).ok_or_else(|| Fail::from(Error::UnknownTrialId(id.to_string())))?;
        put(out, v, "out")
    })
}

/// # Safety
/// `llrs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spk_llrset_len(llrs: *const SpkLlrSet) -> usize {
    llrs.as_ref().map_or(0, |s| s.0.llrs.len())
}

/// # Safety
/// `llrs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spk_llrset_free(llrs: *mut SpkLlrSet) {
    if !llrs.is_null() {
        drop(Box::from_raw(llrs));
    }
}

unsafe fn keyed(
    llrs: *const SpkLlrSet,
    key: *const SpkTrialSet,
    out: *mut f64,
    f: fn(&LlrSet, &TrialSet) -> spkeval::Result<f64>,
) -> SpkStatus {
    guard(|| {
        let llrs = as_ref(llrs, "llrs")?;
        let key = as_ref(key, "key")?;
        put(out, f(&llrs.0, &key.0)?, "out")
    })
}

unsafe fn split(
    tar: *const f64,
    n_tar: usize,
    non: *const f64,
    n_non: usize,
    out: *mut f64,
    f: fn(&[f64], &[f64]) -> spkeval::Result<f64>,
) -> SpkStatus {
    guard(|| {
        let tar = as_slice(tar, n_tar, "tar")?;
        let non = as_slice(non, n_non, "non")?;
        put(out, f(tar, non)?, "out")
    })
}

/// Cllr in bits of the LLRs over the key.
///
/// # Safety
/// `llrs` and `key` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_cllr(llrs: *const SpkLlrSet, key: *const SpkTrialSet, out: *mut f64) -> SpkStatus {
    keyed(llrs, key, out, metrics::cllr)
}

/// Cllr after optimal monotone recalibration.
///
/// # Safety
/// `llrs` and `key` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_min_cllr(llrs: *const SpkLlrSet, key: *const SpkTrialSet, out: *mut f64) -> SpkStatus {
    keyed(llrs, key, out, metrics::min_cllr)
}

/// Equal error rate from the ROC convex hull.
///
/// # Safety
/// `llrs` and `key` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_eer_rocch(llrs: *const SpkLlrSet, key: *const SpkTrialSet, out: *mut f64) -> SpkStatus {
    keyed(llrs, key, out, metrics::eer_rocch)
}

/// Equal error rate from a threshold sweep.
///
/// # Safety
/// `llrs` and `key` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_eer_naive(llrs: *const SpkLlrSet, key: *const SpkTrialSet, out: *mut f64) -> SpkStatus {
    keyed(llrs, key, out, metrics::eer_naive)
}

/// Cllr in bits of target and non-target LLR arrays.
///
/// # Safety
/// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_cllr_split(
    tar: *const f64,
    n_tar: usize,
    non: *const f64,
    n_non: usize,
    out: *mut f64,
) -> SpkStatus {
    split(tar, n_tar, non, n_non, out, metrics::cllr_split)
}

/// Cllr after optimal monotone recalibration.
///
/// # Safety
/// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_min_cllr_split(
    tar: *const f64,
    n_tar: usize,
    non: *const f64,
    n_non: usize,
    out: *mut f64,
) -> SpkStatus {
    split(tar, n_tar, non, n_non, out, metrics::min_cllr_split)
}

/// Equal error rate from the ROC convex hull.
///
/// # Safety
/// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_eer_rocch_split(
    tar: *const f64,
    n_tar: usize,
    non: *const f64,
    n_non: usize,
    out: *mut f64,
) -> SpkStatus {
    split(tar, n_tar, non, n_non, out, metrics::eer_rocch_split)
}

/// Equal error rate from a threshold sweep.
///
/// # Safety
/// `tar` and `non` must point to `n_tar` and `n_non` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_eer_naive_split(
    tar: *const f64,
    n_tar: usize,
    non: *const f64,
    n_non: usize,
    out: *mut f64,
) -> SpkStatus {
    split(tar, n_tar, non, n_non, out, metrics::eer_naive_split)
}

/// Trains a calibration (one score set) or fusion (several) model.
/// A negative or NaN `ridge` selects the default `1e-4 / N`.
/// `converged` may be null.
///
/// # Safety
/// `scores` must point to `n_scores` live handles; `key` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_model_train(
    scores: *const *const SpkScoreSet,
    n_scores: usize,
    key: *const SpkTrialSet,
    prior: f64,
    ridge: f64,
    out: *mut *mut SpkModel,
    converged: *mut bool,
) -> SpkStatus {
    guard(|| {
        let sets = score_sets(scores, n_scores)?;
        let key = as_ref(key, "key")?;
        let opts = TrainOptions {
            prior,
            ridge: if ridge >= 0.0 { Some(ridge) } else { None },
        };
        let (model, diag) = calibration::train(&sets, &key.0, &opts)?;
        if !converged.is_null() {
            converged.write(diag.converged);
        }
        put(out, Box::into_raw(Box::new(SpkModel(model))), "out")
    })
}

/// Maps score sets (same order as training) to LLRs.
///
/// # Safety
/// `model` must be live; `scores` must point to `n_scores` live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_model_apply(
    model: *const SpkModel,
    scores: *const *const SpkScoreSet,
    n_scores: usize,
    out: *mut *mut SpkLlrSet,
) -> SpkStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let sets = score_sets(scores, n_scores)?;
        let llrs = calibration::apply(&model.0, &sets)?;
        put(out, Box::into_raw(Box::new(SpkLlrSet(llrs))), "out")
    })
}

/// Copies up to `cap` weights into `weights` and returns the total count.
///
/// # Safety
/// `model` must be null or live; `weights` must hold `cap` doubles when `cap > 0`.
#[no_mangle]
pub unsafe extern "C" fn spk_model_weights(model: *const SpkModel, weights: *mut f64, cap: usize) -> usize {
    let Some(m) = model.as_ref() else { return 0 };
    if !weights.is_null() {
        for (i, w) in m.0.weights.iter().take(cap).enumerate() {
            weights.add(i).write(*w);
        }
    }
    m.0.weights.len()
}

/// Offset of the model, or NaN for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn spk_model_offset(model: *const SpkModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.offset)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spk_model_free(model: *mut SpkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
