//! C interface to the separator.
//!
//! Every function returns a [`QsepStatus`]. On failure the message of the
//! most recent error on the calling thread is available through
//! [`qsep_last_error_message`]. Density matrices cross the boundary as 128
//! doubles: the 8x8 matrix in row-major order with real and imaginary parts
//! interleaved, the same layout as a QSD1 record.
//!
//! Handles are opaque. Each `*_free` function accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qsep::oracles::classify;
use qsep::separator::checkpoint::Checkpoint;
use qsep::separator::{baseline_forward, forward, Baseline, LossModel, Reconstruction, SeparatorParams};
use qsep::states::{DensityMatrix, DIM};
use qsep::training::format;
use qsep::training::{generate, Dataset, GenKind};
use qsep::Error;

/// Number of doubles in one interleaved density matrix.
pub const QSEP_RHO_LEN: usize = 128;
const _: () = assert!(QSEP_RHO_LEN == 2 * DIM * DIM);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QsepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Divergence = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// A trained separator or the partial-trace baseline.
pub struct QsepModel {
    inner: Model,
}

enum Model {
    Baseline,
    Separator(Box<SeparatorParams>),
}

impl Model {
    fn as_loss_model(&self) -> &dyn LossModel {
        match self {
            Model::Baseline => &Baseline,
            Model::Separator(p) => p.as_ref(),
        }
    }

    fn forward(&self, rho: &DensityMatrix) -> qsep::Result<Reconstruction> {
        match self {
            Model::Baseline => Ok(baseline_forward(rho)),
            Model::Separator(p) => forward(rho, p),
        }
    }
}

/// A labeled dataset held in memory.
pub struct QsepDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(QsepStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => QsepStatus::InvalidArgument,
            Error::Format { .. } | Error::Json(_) => QsepStatus::Format,
            Error::Divergence(_) => QsepStatus::Divergence,
            Error::Io(_) => QsepStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(QsepStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QsepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QsepStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            QsepStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, name)?))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QsepStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn rho_arg(p: *const f64) -> Result<DensityMatrix, Failure> {
    if p.is_null() {
        return Err(null("rho"));
    }
    let values = std::slice::from_raw_parts(p, QSEP_RHO_LEN);
    Ok(DensityMatrix::from_interleaved(values)?)
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

fn write_matrix(m: &qsep::linalg::CMatrix, out: &mut [f64]) {
    for r in 0..DIM {
        for c in 0..DIM {
            let z = m[(r, c)];
            out[2 * (r * DIM + c)] = z.re;
            out[2 * (r * DIM + c) + 1] = z.im;
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qsep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the length the full
/// message needs including the terminator. Returns 0 when no error has
/// been recorded.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qsep_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_load(path: *const c_char, out: *mut *mut QsepModel) -> QsepStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ck = Checkpoint::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(QsepModel {
            inner: Model::Separator(Box::new(ck.params)),
        }));
        Ok(())
    })
}

/// The partial-trace baseline model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_baseline(out: *mut *mut QsepModel) -> QsepStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(QsepModel { inner: Model::Baseline }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_free(model: *mut QsepModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reconstruction loss of one state.
///
/// # Safety
/// `rho` must point to `QSEP_RHO_LEN` doubles; `model` and `loss` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_loss(model: *const QsepModel, rho: *const f64, loss: *mut f64) -> QsepStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(loss, "loss")?;
        *out = m.inner.forward(&rho_arg(rho)?)?.loss;
        Ok(())
    })
}

/// Reconstructed matrix and loss of one state. `rho_hat` receives
/// `QSEP_RHO_LEN` doubles; `loss` may be null.
///
/// # Safety
/// `rho` and `rho_hat` must point to `QSEP_RHO_LEN` doubles each.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_reconstruct(
    model: *const QsepModel,
    rho: *const f64,
    rho_hat: *mut f64,
    loss: *mut f64,
) -> QsepStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if rho_hat.is_null() {
            return Err(null("rho_hat"));
        }
        let rec = m.inner.forward(&rho_arg(rho)?)?;
        write_matrix(&rec.rho_hat, std::slice::from_raw_parts_mut(rho_hat, QSEP_RHO_LEN));
        if let Some(l) = loss.as_mut() {
            *l = rec.loss;
        }
        Ok(())
    })
}

/// Losses of every record of `dataset`, in order, into `losses[0..len]`.
/// `len` must equal the dataset length.
///
/// # Safety
/// `losses` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qsep_model_dataset_losses(
    model: *const QsepModel,
    dataset: *const QsepDataset,
    losses: *mut f64,
    len: usize,
) -> QsepStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if losses.is_null() {
            return Err(null("losses"));
        }
        if len != ds.inner.len() {
            return Err(Failure(
                QsepStatus::OutOfRange,
                format!("buffer holds {len} losses, dataset has {}", ds.inner.len()),
            ));
        }
        let values = m.inner.as_loss_model().losses(&ds.inner.states());
        std::slice::from_raw_parts_mut(losses, len).copy_from_slice(&values);
        Ok(())
    })
}

/// Oracle label of a state as the QSD1 label bitfield.
///
/// # Safety
/// `rho` must point to `QSEP_RHO_LEN` doubles and `bits` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qsep_classify(rho: *const f64, bits: *mut u16) -> QsepStatus {
    guard(|| {
        let out = out_arg(bits, "bits")?;
        *out = classify(&rho_arg(rho)?, None).to_bits();
        Ok(())
    })
}

/// Loads a QSD1 dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qsep_dataset_load(path: *const c_char, out: *mut *mut QsepDataset) -> QsepStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = format::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(QsepDataset { inner: ds }));
        Ok(())
    })
}

/// Generates `count` records of `kind` (the names accepted by `qsep gen`).
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qsep_dataset_generate(
    kind: *const c_char,
    count: usize,
    seed: u64,
    out: *mut *mut QsepDataset,
) -> QsepStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let kind: GenKind = str_arg(kind, "kind")?.parse()?;
        *out = Box::into_raw(Box::new(QsepDataset {
            inner: generate(kind, count, seed)?,
        }));
        Ok(())
    })
}

/// Writes a dataset as a QSD1 file.
///
/// # Safety
/// `dataset` must be a valid handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qsep_dataset_save(dataset: *const QsepDataset, path: *const c_char) -> QsepStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        format::save(&ds.inner, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of records, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn qsep_dataset_len(dataset: *const QsepDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Copies record `index` into `rho` (`QSEP_RHO_LEN` doubles) and its label
/// bitfield into `bits`. Either output may be null.
///
/// # Safety
/// Non-null outputs must be valid for writes of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn qsep_dataset_get(
    dataset: *const QsepDataset,
    index: usize,
    rho: *mut f64,
    bits: *mut u16,
) -> QsepStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let r = ds.inner.records.get(index).ok_or_else(|| {
            Failure(
                QsepStatus::OutOfRange,
                format!("index {index} out of range for {} records", ds.inner.len()),
            )
        })?;
        if !rho.is_null() {
            std::slice::from_raw_parts_mut(rho, QSEP_RHO_LEN).copy_from_slice(&r.rho.to_interleaved());
        }
        if let Some(b) = bits.as_mut() {
            *b = r.label.to_bits();
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qsep_dataset_free(dataset: *mut QsepDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}
