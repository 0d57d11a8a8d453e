//! C ABI over `pbilevel`.
//!
//! Datasets and trained models are opaque heap handles released with their
//! `*_free` function. Every fallible call returns a [`PbStatus`]; on failure
//! the message is available from [`pb_last_error`] on the same thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use pbilevel::baseline::{classify, train_baseline, BaselineConfig};
use pbilevel::evaluation::{f1_score, p4_score, ConfusionCounts};
use pbilevel::experiment::{adversary_size, class_rows, draw_noise, init_beta0, solve_cell};
use pbilevel::generator::smooth_step;
use pbilevel::lm_solver::{LmConfig, SolverStatus};
use pbilevel::objectives::{AdversaryLabels, BowDataset, ModelWeights};
use pbilevel::stationarity::BilevelPoint;
use pbilevel::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EmptyData = 4,
    Singular = 5,
    Parse = 6,
    Io = 7,
    Panic = 8,
}

/// How a model's training run ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbSolveStatus {
    Converged = 0,
    MaxIter = 1,
    Stalled = 2,
}

/// Binary feature matrix with labels.
pub struct PbDataset {
    inner: BowDataset,
}

/// Trained weights plus the outcome of the run that produced them.
pub struct PbModel {
    weights: ModelWeights,
    status: PbSolveStatus,
    iterations: usize,
    residual_sq: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PbStatus {
    match e {
        Error::DimensionMismatch { .. } => PbStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::Config(_) => PbStatus::InvalidArgument,
        Error::EmptyTrainingSet | Error::EmptyVocabulary | Error::InsufficientRecords { .. } => PbStatus::EmptyData,
        Error::Singular { .. } => PbStatus::Singular,
        Error::Parse { .. } => PbStatus::Parse,
        Error::Io { .. } => PbStatus::Io,
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

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PbStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            PbStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PbStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pb_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// `(tanh(alpha (v - beta)) + 1) / 2`.
#[no_mangle]
pub extern "C" fn pb_smooth_step(v: f64, alpha: f64, beta: f64) -> f64 {
    smooth_step(v, alpha, beta)
}

#[no_mangle]
pub extern "C" fn pb_p4(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    p4_score(&ConfusionCounts::new(tp, tn, fp, fn_))
}

#[no_mangle]
pub extern "C" fn pb_f1(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    f1_score(&ConfusionCounts::new(tp, tn, fp, fn_))
}

/// Build a dataset from a row-major `n x q` 0/1 matrix and `n` labels.
///
/// # Safety
/// `x` must point to `n * q` bytes, `y` to `n` bytes and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pb_dataset_new(
    x: *const u8,
    y: *const u8,
    n: usize,
    q: usize,
    out: *mut *mut PbDataset,
) -> PbStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cells = n
            .checked_mul(q)
            .ok_or_else(|| Error::InvalidArgument("n * q overflows".into()))?;
        let x = input(x, cells, "x")?;
        let y = input(y, n, "y")?;
        let inner = if n == 0 {
            BowDataset::empty(q)
        } else {
            let rows: Vec<Vec<u8>> = x.chunks(q.max(1)).map(<[u8]>::to_vec).collect();
            BowDataset::from_rows(&rows, y.to_vec())?
        };
        *out = Box::into_raw(Box::new(PbDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from [`pb_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pb_dataset_free(ds: *mut PbDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn pb_dataset_rows(ds: *const PbDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn pb_dataset_cols(ds: *const PbDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.q())
}

/// Regularised logistic regression on `ds`.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pb_train_baseline(ds: *const PbDataset, mu: f64, out: *mut *mut PbModel) -> PbStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let fit = train_baseline(&ds.inner, &BaselineConfig { mu, ..BaselineConfig::default() })?;
        *out = Box::into_raw(Box::new(PbModel {
            status: if fit.converged {
                PbSolveStatus::Converged
            } else {
                PbSolveStatus::MaxIter
            },
            iterations: fit.iterations,
            residual_sq: fit.grad_norm * fit.grad_norm,
            weights: fit.weights,
        }));
        Ok(())
    })
}

/// Solve the bilevel stationarity system for one configuration.
///
/// The adversary generates `round(rho * class-1 rows)` rows of class 1 from
/// noise drawn with `seed`; the start point is `w = 0`, `alpha = alpha0`,
/// `beta` the class-1 feature rates of up to 200 sampled rows, and `zeta0`.
/// `max_iter = 0` keeps the default iteration limit.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pb_solve_bilevel(
    ds: *const PbDataset,
    rho: f64,
    mu: f64,
    alpha0: f64,
    zeta0: f64,
    seed: u64,
    max_iter: usize,
    out: *mut *mut PbModel,
) -> PbStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0,1], got {rho}")).into());
        }
        let train = &ds.inner;
        let adv = class_rows(train, 1)?;
        if adv.n() == 0 {
            return Err(Error::InvalidArgument("dataset has no class-1 rows".into()).into());
        }
        let beta0 = init_beta0(&adv, adv.n().min(200), seed)?;
        let m = adversary_size(adv.n(), rho);
        let noise = draw_noise(seed, m, train.q());
        let gamma = AdversaryLabels::uniform(m, 1)?;
        let mut lm = LmConfig::default();
        if max_iter > 0 {
            lm.max_iter = max_iter;
        }
        let state = solve_cell(train, &noise, &gamma, mu, alpha0, &beta0, zeta0, &lm)?;
        let point = BilevelPoint::unpack(&state.point)?;
        *out = Box::into_raw(Box::new(PbModel {
            status: match state.status {
                SolverStatus::Converged => PbSolveStatus::Converged,
                SolverStatus::MaxIter => PbSolveStatus::MaxIter,
                SolverStatus::Stalled => PbSolveStatus::Stalled,
            },
            iterations: state.iter,
            residual_sq: state.residual_sq(),
            weights: point.w,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pb_model_free(model: *mut PbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of weights; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_len(model: *const PbModel) -> usize {
    model.as_ref().map_or(0, |m| m.weights.q())
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_status(model: *const PbModel) -> PbSolveStatus {
    model.as_ref().map_or(PbSolveStatus::Stalled, |m| m.status)
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_iterations(model: *const PbModel) -> usize {
    model.as_ref().map_or(0, |m| m.iterations)
}

/// Final squared residual (bilevel) or squared gradient norm (baseline).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pb_model_residual_sq(model: *const PbModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.residual_sq)
}

/// Copy the weights into `out`, which must hold exactly `len` values.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pb_model_weights(model: *const PbModel, out: *mut f64, len: usize) -> PbStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if len != m.weights.q() {
            return Err(Error::DimensionMismatch {
                context: "weights buffer",
                expected: m.weights.q(),
                actual: len,
            }
            .into());
        }
        output(out, len, "out")?.copy_from_slice(m.weights.as_slice());
        Ok(())
    })
}

/// Predict 0/1 for every row of `ds` (1 iff the class-1 probability is at
/// least `threshold`).
///
/// # Safety
/// Handles must be live and `out` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pb_model_predict(
    model: *const PbModel,
    ds: *const PbDataset,
    threshold: f64,
    out: *mut u8,
    len: usize,
) -> PbStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let d = deref(ds, "dataset")?;
        if len != d.inner.n() {
            return Err(Error::DimensionMismatch {
                context: "prediction buffer",
                expected: d.inner.n(),
                actual: len,
            }
            .into());
        }
        let preds = classify(&m.weights, &d.inner.x, threshold)?;
        output(out, len, "out")?.copy_from_slice(&preds);
        Ok(())
    })
}
