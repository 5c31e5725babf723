//! C ABI over `sense-core`.
//!
//! Models and embedding stores are opaque handles created by `*_load` /
//! `*_init` and released with `*_free`. Every fallible call returns a
//! [`SenseStatus`]; on failure [`sense_last_error`] holds a message for the
//! calling thread. All functions catch panics and report them as
//! `SENSE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::ArrayView2;
use sense_core::model::{forward_frames, ModelDims, ModelParams};
use sense_core::retrieval::{top_k, EmbeddingStore};
use sense_core::training::cosine_loss;
use sense_core::SenseError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SenseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Shape = 6,
    Domain = 7,
    State = 8,
    Input = 9,
    NonFinite = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&SenseError> for SenseStatus {
    fn from(e: &SenseError) -> Self {
        match e {
            SenseError::Config(_) => SenseStatus::Config,
            SenseError::Io { .. } => SenseStatus::Io,
            SenseError::Parse { .. } => SenseStatus::Parse,
            SenseError::Shape(_) => SenseStatus::Shape,
            SenseError::Domain(_) => SenseStatus::Domain,
            SenseError::State(_) => SenseStatus::State,
            SenseError::Input(_) => SenseStatus::Input,
            SenseError::NonFinite { .. } => SenseStatus::NonFinite,
        }
    }
}

/// Opaque model handle.
pub struct SenseModel {
    params: ModelParams,
}

/// Opaque embedding store handle.
pub struct SenseStore {
    store: EmbeddingStore,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SenseStatus, String);

impl From<SenseError> for Failure {
    fn from(e: SenseError) -> Self {
        Failure(SenseStatus::from(&e), e.to_string())
    }
}

fn fail<T>(status: SenseStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SenseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SenseStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SenseStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(SenseStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(SenseStatus::InvalidUtf8, "path is not valid UTF-8"),
    }
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SenseStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SenseStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sense_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sense_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sense_model_load(path: *const c_char, out: *mut *mut SenseModel) -> SenseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let params = ModelParams::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SenseModel { params }));
        Ok(())
    })
}

/// Freshly initialized model; `d_a = 0` uses `d_h`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sense_model_init(
    d_in: usize,
    d_h: usize,
    d_a: usize,
    d_e: usize,
    seed: u64,
    out: *mut *mut SenseModel,
) -> SenseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let d_a = if d_a == 0 { d_h } else { d_a };
        let params = ModelParams::init(ModelDims::new(d_in, d_h, d_e).with_attention_dim(d_a), seed)?;
        *out = Box::into_raw(Box::new(SenseModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a valid handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sense_model_save(model: *const SenseModel, path: *const c_char) -> SenseStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(SenseStatus::NullPointer, "model is null");
        };
        m.params.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Write `(d_in, d_h, d_a, d_e)`; any output pointer may be null.
///
/// # Safety
/// `model` must be a valid handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sense_model_dims(
    model: *const SenseModel,
    d_in: *mut usize,
    d_h: *mut usize,
    d_a: *mut usize,
    d_e: *mut usize,
) -> SenseStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(SenseStatus::NullPointer, "model is null");
        };
        let dims = m.params.dims;
        for (p, v) in [(d_in, dims.d_in), (d_h, dims.d_h), (d_a, dims.d_a), (d_e, dims.d_e)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sense_model_free(model: *mut SenseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embed `t` row-major frames of width `d_in` into `out` (`out_len = d_e`).
/// If `attention_out` is non-null it receives the `t` attention weights.
///
/// # Safety
/// `frames` must hold `t * d_in` doubles, `out` `out_len` doubles and a
/// non-null `attention_out` `t` doubles.
#[no_mangle]
pub unsafe extern "C" fn sense_model_embed(
    model: *const SenseModel,
    frames: *const f64,
    t: usize,
    d_in: usize,
    out: *mut f64,
    out_len: usize,
    attention_out: *mut f64,
) -> SenseStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(SenseStatus::NullPointer, "model is null");
        };
        let n = t
            .checked_mul(d_in)
            .ok_or_else(|| Failure(SenseStatus::Shape, "t * d_in overflows".into()))?;
        let data = slice_arg(frames, n, "frames")?;
        let view = ArrayView2::from_shape((t, d_in), data)
            .map_err(|e| Failure(SenseStatus::Shape, e.to_string()))?;
        let fwd = forward_frames(&m.params, view, "ffi")?;
        if out.is_null() {
            return fail(SenseStatus::NullPointer, "out is null");
        }
        if out_len < fwd.embedding.len() {
            return fail(
                SenseStatus::BufferTooSmall,
                format!("out holds {out_len} values, need {}", fwd.embedding.len()),
            );
        }
        std::slice::from_raw_parts_mut(out, fwd.embedding.len()).copy_from_slice(&fwd.embedding);
        if !attention_out.is_null() {
            std::slice::from_raw_parts_mut(attention_out, t).copy_from_slice(&fwd.attention.weights);
        }
        Ok(())
    })
}

/// Load a store file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sense_store_load(path: *const c_char, out: *mut *mut SenseStore) -> SenseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let store = EmbeddingStore::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SenseStore { store }));
        Ok(())
    })
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sense_store_free(store: *mut SenseStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of entries; 0 for a null handle.
///
/// # Safety
/// `store` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sense_store_len(store: *const SenseStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.len())
}

/// Vector dimension; 0 for a null handle.
///
/// # Safety
/// `store` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sense_store_dim(store: *const SenseStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.dim())
}

/// New handle holding a mean-centered copy of `store`.
///
/// # Safety
/// `store` must be a valid handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sense_store_mean_center(
    store: *const SenseStore,
    out: *mut *mut SenseStore,
) -> SenseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let Some(s) = store.as_ref() else {
            return fail(SenseStatus::NullPointer, "store is null");
        };
        let centered = s.store.mean_center()?;
        *out = Box::into_raw(Box::new(SenseStore { store: centered }));
        Ok(())
    })
}

/// Copy the id of entry `index` into `buf` as a NUL-terminated string.
/// `needed` (if non-null) receives the buffer size required, including the
/// terminator.
///
/// # Safety
/// `store` must be a valid handle; `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sense_store_id(
    store: *const SenseStore,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> SenseStatus {
    guard(|| {
        let Some(s) = store.as_ref() else {
            return fail(SenseStatus::NullPointer, "store is null");
        };
        if index >= s.store.len() {
            return fail(SenseStatus::Input, format!("index {index} out of range for {} entries", s.store.len()));
        }
        let id = s.store.id(index).as_bytes();
        if let Some(n) = needed.as_mut() {
            *n = id.len() + 1;
        }
        if buf.is_null() || buf_len < id.len() + 1 {
            return fail(SenseStatus::BufferTooSmall, format!("id needs {} bytes", id.len() + 1));
        }
        let dst = std::slice::from_raw_parts_mut(buf.cast::<u8>(), id.len() + 1);
        dst[..id.len()].copy_from_slice(id);
        dst[id.len()] = 0;
        Ok(())
    })
}

/// Exact cosine top-`k` of `query` (length `dim`). Writes up to `k` entry
/// indices and scores, best first, and the number written to `count`.
///
/// # Safety
/// `query` must hold `dim` doubles; `indices` and `scores` `k` elements each.
#[no_mangle]
pub unsafe extern "C" fn sense_store_top_k(
    store: *const SenseStore,
    query: *const f64,
    dim: usize,
    k: usize,
    indices: *mut usize,
    scores: *mut f64,
    count: *mut usize,
) -> SenseStatus {
    guard(|| {
        let Some(s) = store.as_ref() else {
            return fail(SenseStatus::NullPointer, "store is null");
        };
        let count = out_arg(count, "count")?;
        *count = 0;
        let q = slice_arg(query, dim, "query")?;
        let hits = top_k(q, &s.store, k)?;
        if !hits.is_empty() && (indices.is_null() || scores.is_null()) {
            return fail(SenseStatus::NullPointer, "indices or scores is null");
        }
        for (i, hit) in hits.iter().enumerate() {
            *indices.add(i) = s.store.position(&hit.id).expect("hit comes from store");
            *scores.add(i) = hit.score;
        }
        *count = hits.len();
        Ok(())
    })
}

/// `1 - cos(s, t)` for two vectors of length `n`.
///
/// # Safety
/// `s` and `t` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sense_cosine_loss(s: *const f64, t: *const f64, n: usize, out: *mut f64) -> SenseStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let loss = cosine_loss(slice_arg(s, n, "s")?, slice_arg(t, n, "t")?)?;
        *out = loss;
        Ok(())
    })
}
