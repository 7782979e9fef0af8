//! C ABI for loading checkpoints, embedding windows, predicting classes and
//! scoring predictions.
//!
//! Every fallible function returns an [`SslharStatus`]; on failure the message
//! is kept per thread and read with [`sslhar_last_error_message`]. Windows are
//! passed as `n * SSLHAR_WINDOW_VALUES` doubles, time-major with six channels
//! per timestep (`ax ay az gx gy gz`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sslhar::backbones::{embed_with, load_checkpoint, EncoderConfig};
use sslhar::eval::macro_f1;
use sslhar::finetune::{predict, EVAL_BATCH};
use sslhar::harmonize::{SensorWindow, CHANNELS, WINDOW_LEN};
use sslhar::params::ParamStore;
use sslhar::Error;

pub const SSLHAR_WINDOW_LEN: usize = 128;
pub const SSLHAR_CHANNELS: usize = 6;
pub const SSLHAR_WINDOW_VALUES: usize = 768;

const _: () = assert!(SSLHAR_WINDOW_LEN == WINDOW_LEN && SSLHAR_CHANNELS == CHANNELS);
const _: () = assert!(SSLHAR_WINDOW_VALUES == WINDOW_LEN * CHANNELS);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SslharStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    NoClassifier = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// A loaded checkpoint: an encoder, optionally with a fine-tuned head.
pub struct SslharModel {
    encoder: EncoderConfig,
    params: ParamStore,
    classes: Option<Vec<u8>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SslharStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SslharStatus::Io,
            Error::Checkpoint(_) | Error::ArchMismatch(_) | Error::Json(_) => SslharStatus::Checkpoint,
            Error::Shape(_) => SslharStatus::Shape,
            _ => SslharStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SslharStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SslharStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SslharStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SslharStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(m: *const SslharModel) -> Result<&'a SslharModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn windows_from(data: *const f64, n: usize) -> Result<Vec<SensorWindow>, Failure> {
    if n == 0 {
        return Err(Failure(SslharStatus::InvalidArgument, "no windows".into()));
    }
    if data.is_null() {
        return Err(null("windows"));
    }
    let values = std::slice::from_raw_parts(data, n * SSLHAR_WINDOW_VALUES);
    values
        .chunks_exact(SSLHAR_WINDOW_VALUES)
        .enumerate()
        .map(|(i, v)| SensorWindow::new(format!("ffi/{i}"), v.to_vec(), 0, "ffi".into(), "ffi".into()).map_err(Failure::from))
        .collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sslhar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message of this thread, excluding the
/// terminating NUL; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn sslhar_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to fit).
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sslhar_last_error_message(buf: *mut c_char, len: usize) -> SslharStatus {
    if buf.is_null() || len == 0 {
        return SslharStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let bytes = e.borrow().as_ref().map(|c| c.as_bytes().to_vec()).unwrap_or_default();
        let n = bytes.len().min(len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
    });
    SslharStatus::Ok
}

/// Load the checkpoint directory `dir` into a new model handle.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sslhar_model_load(dir: *const c_char, out: *mut *mut SslharModel) -> SslharStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Failure(SslharStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let (meta, params) = load_checkpoint(&PathBuf::from(path))?;
        let classes = meta.extra.get("classes").and_then(class_list).filter(|_| params.contains("cls.out.w"));
        *out = Box::into_raw(Box::new(SslharModel { encoder: meta.encoder, params, classes }));
        Ok(())
    })
}

fn class_list(v: &serde_json::Value) -> Option<Vec<u8>> {
    v.as_array()?.iter().map(|x| x.as_u64().and_then(|n| u8::try_from(n).ok())).collect()
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`sslhar_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sslhar_model_free(model: *mut SslharModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the pooled embedding.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sslhar_model_embedding_width(model: *const SslharModel, out: *mut usize) -> SslharStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.encoder.embedding_width();
        Ok(())
    })
}

/// Total number of array elements in the checkpoint.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sslhar_model_param_count(model: *const SslharModel, out: *mut usize) -> SslharStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.params.numel();
        Ok(())
    })
}

/// Number of classes of the fine-tuned head; 0 for a bare encoder.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sslhar_model_class_count(model: *const SslharModel, out: *mut usize) -> SslharStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.classes.as_ref().map_or(0, Vec::len);
        Ok(())
    })
}

/// Pooled embeddings of `n_windows` windows into `out` (`n_windows * width`
/// doubles, row-major).
///
/// # Safety
/// `windows` must hold `n_windows * SSLHAR_WINDOW_VALUES` doubles and `out`
/// must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sslhar_model_embed(
    model: *const SslharModel,
    windows: *const f64,
    n_windows: usize,
    out: *mut f64,
    out_len: usize,
) -> SslharStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ws = windows_from(windows, n_windows)?;
        let need = n_windows * m.encoder.embedding_width();
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < need {
            return Err(Failure(SslharStatus::BufferTooSmall, format!("output holds {out_len} values, need {need}")));
        }
        let refs: Vec<&SensorWindow> = ws.iter().collect();
        let emb = embed_with(&m.params, &m.encoder, &refs, EVAL_BATCH);
        std::ptr::copy_nonoverlapping(emb.data().as_ptr(), out, need);
        Ok(())
    })
}

/// Unified class ids predicted by the fine-tuned head, one per window.
///
/// # Safety
/// `windows` must hold `n_windows * SSLHAR_WINDOW_VALUES` doubles and `out`
/// must hold `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sslhar_model_predict(
    model: *const SslharModel,
    windows: *const f64,
    n_windows: usize,
    out: *mut u8,
    out_len: usize,
) -> SslharStatus {
    guard(|| {
        let m = model_ref(model)?;
        let classes = m
            .classes
            .as_ref()
            .ok_or_else(|| Failure(SslharStatus::NoClassifier, "checkpoint has no fine-tuned head".into()))?;
        let ws = windows_from(windows, n_windows)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < n_windows {
            return Err(Failure(SslharStatus::BufferTooSmall, format!("output holds {out_len} values, need {n_windows}")));
        }
        let refs: Vec<&SensorWindow> = ws.iter().collect();
        for (i, p) in predict(&m.params, &m.encoder, &refs).into_iter().enumerate() {
            *out.add(i) = classes[p];
        }
        Ok(())
    })
}

/// Macro F1 over the classes present in `labels`.
///
/// # Safety
/// `preds` and `labels` must hold `n` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sslhar_macro_f1(
    preds: *const usize,
    labels: *const usize,
    n: usize,
    n_classes: usize,
    out: *mut f64,
) -> SslharStatus {
    guard(|| {
        if preds.is_null() || labels.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        if n == 0 {
            return Err(Failure(SslharStatus::InvalidArgument, "no predictions".into()));
        }
        let p = std::slice::from_raw_parts(preds, n);
        let l = std::slice::from_raw_parts(labels, n);
        *out = macro_f1(p, l, n_classes)?;
        Ok(())
    })
}
