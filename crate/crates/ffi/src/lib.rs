//! C ABI over `cate_ebm`.
//!
//! Every function returns a [`CateEbmStatus`]. On failure the message is
//! available from [`cate_ebm_last_error_message`] on the same thread until
//! the next call. Matrices are dense row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cate_ebm::ebm::EbmModel;
use cate_ebm::eval::{mcc, pehe};
use cate_ebm::nce::{train_ebm, TrainConfig};
use cate_ebm::numerics::{random_orthogonal, Matrix, SeededRng};
use cate_ebm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CateEbmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

/// Opaque trained model.
pub struct CateEbmModel(EbmModel);

/// Training settings. `hidden` may be null, which selects three layers of
/// width 20.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CateEbmTrainParams {
    pub k: usize,
    pub b: usize,
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub b_seed: u64,
    pub patience: usize,
    pub val_fraction: f64,
    pub hidden: *const usize,
    pub n_hidden: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CateEbmStatus {
    match e {
        Error::Io { .. } | Error::EmptyFile { .. } => CateEbmStatus::Io,
        Error::BadMagic
        | Error::VersionMismatch { .. }
        | Error::ChecksumMismatch
        | Error::Truncated
        | Error::MalformedModel(_) => CateEbmStatus::Format,
        _ if e.exit_code() == 3 => CateEbmStatus::Numeric,
        _ => CateEbmStatus::InvalidArgument,
    }
}

struct Fail(CateEbmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CateEbmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CateEbmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CateEbmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CateEbmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CateEbmStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_arg<'a>(m: *const CateEbmModel) -> Result<&'a EbmModel, Fail> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(CateEbmStatus::InvalidArgument, format!("{what} size overflows")))?;
    let data = slice_arg(p, len, what)?;
    Ok(Matrix::from_vec(rows, cols, data.to_vec())?)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cate_ebm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_model_load(
    path: *const c_char,
    out: *mut *mut CateEbmModel,
) -> CateEbmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = EbmModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CateEbmModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_model_save(
    model: *const CateEbmModel,
    path: *const c_char,
) -> CateEbmStatus {
    guard(|| {
        let m = model_arg(model)?;
        m.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_model_free(model: *mut CateEbmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_model_dims(
    model: *const CateEbmModel,
    input_dim: *mut usize,
    k: *mut usize,
) -> CateEbmStatus {
    guard(|| {
        let m = model_arg(model)?;
        if input_dim.is_null() || k.is_null() {
            return Err(null("output"));
        }
        *input_dim = m.input_dim();
        *k = m.k();
        Ok(())
    })
}

/// Standardized representations of `n` rows of width `d` into `out`
/// (`n × k`).
///
/// # Safety
/// `x` holds `n * d` values and `out` has room for `n * k`.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_model_represent(
    model: *const CateEbmModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> CateEbmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let xm = matrix_arg(x, n, d, "x")?;
        let z = m.represent(&xm, true)?;
        out_slice(out, z.as_slice().len(), "out")?.copy_from_slice(z.as_slice());
        Ok(())
    })
}

/// Energy of one row under subset `j`.
///
/// # Safety
/// `x` holds `d` values; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_model_energy(
    model: *const CateEbmModel,
    x: *const f64,
    d: usize,
    j: usize,
    out: *mut f64,
) -> CateEbmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let row = slice_arg(x, d, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.energy(row, j)?;
        Ok(())
    })
}

/// Fills `params` with the library defaults.
///
/// # Safety
/// `params` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_train_params_default(
    params: *mut CateEbmTrainParams,
) -> CateEbmStatus {
    guard(|| {
        let p = params.as_mut().ok_or_else(|| null("params"))?;
        let t = TrainConfig::default();
        *p = CateEbmTrainParams {
            k: t.k,
            b: t.b,
            rho: t.rho,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed: t.seed,
            b_seed: t.b_seed,
            patience: t.patience,
            val_fraction: t.val_fraction,
            hidden: std::ptr::null(),
            n_hidden: 0,
        };
        Ok(())
    })
}

/// Trains a model on `n × d` covariates.
///
/// # Safety
/// `x` holds `n * d` values; `params` and `out` are valid; `params.hidden`
/// is null or holds `params.n_hidden` widths.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_train(
    x: *const f64,
    n: usize,
    d: usize,
    params: *const CateEbmTrainParams,
    out: *mut *mut CateEbmModel,
) -> CateEbmStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let hidden = if p.hidden.is_null() {
            TrainConfig::default().hidden
        } else {
            slice_arg(p.hidden, p.n_hidden, "hidden")?.to_vec()
        };
        let cfg = TrainConfig {
            k: p.k,
            hidden,
            b: p.b,
            rho: p.rho,
            epochs: p.epochs,
            batch_size: p.batch_size,
            lr: p.lr,
            seed: p.seed,
            b_seed: p.b_seed,
            patience: p.patience,
            val_fraction: p.val_fraction,
            feature_kinds: None,
        };
        let xm = matrix_arg(x, n, d, "x")?;
        let trained = train_ebm(&xm, &cfg, None)?;
        *out = Box::into_raw(Box::new(CateEbmModel(trained.model)));
        Ok(())
    })
}

/// Mean squared difference between two effect vectors of length `n`.
///
/// # Safety
/// Both inputs hold `n` values; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_pehe(
    tau_hat: *const f64,
    tau: *const f64,
    n: usize,
    out: *mut f64,
) -> CateEbmStatus {
    guard(|| {
        let a = slice_arg(tau_hat, n, "tau_hat")?;
        let b = slice_arg(tau, n, "tau")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = pehe(a, b)?;
        Ok(())
    })
}

/// Per-dimension correlation of two `n × k` representations, averaged.
///
/// # Safety
/// Both inputs hold `n * k` values; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_mcc(
    r1: *const f64,
    r2: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
) -> CateEbmStatus {
    guard(|| {
        let a = matrix_arg(r1, n, k, "r1")?;
        let b = matrix_arg(r2, n, k, "r2")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = mcc(&a, &b)?;
        Ok(())
    })
}

/// Seeded `k × k` orthogonal matrix into `out`.
///
/// # Safety
/// `out` has room for `k * k` values.
#[no_mangle]
pub unsafe extern "C" fn cate_ebm_random_orthogonal(
    k: usize,
    seed: u64,
    out: *mut f64,
) -> CateEbmStatus {
    guard(|| {
        let b = random_orthogonal(k, &mut SeededRng::new(seed))?;
        let m = b.as_matrix().as_slice();
        out_slice(out, m.len(), "out")?.copy_from_slice(m);
        Ok(())
    })
}
