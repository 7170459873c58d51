//! C ABI over the coneboot core.
//!
//! Objects cross the boundary as opaque handles created by `cb_*_new` /
//! `cb_*_load` style functions and released with the matching `*_free`.
//! Every call returns a [`CbStatus`]; on failure, [`cb_last_error`]
//! describes what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::path::Path;

use coneboot::metrics::{apply_mask, pixel_accuracy};
use coneboot::segnet::{load_weights, predict_mask, ModelWeights};
use coneboot::stats::{holm_bonferroni, students_t_test, SampleSet};
use coneboot::{BinaryMask, Error, Frame, FrameSequence, MaskAlgorithm, MaskKind};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Malformed = 4,
    DimensionMismatch = 5,
    Panic = 6,
    Other = 7,
}

/// Mask pipeline depth.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbMaskKind {
    Threshold = 0,
    FilledThreshold = 1,
    Hull = 2,
}

impl From<CbMaskKind> for MaskKind {
    fn from(k: CbMaskKind) -> Self {
        match k {
            CbMaskKind::Threshold => MaskKind::Threshold,
            CbMaskKind::FilledThreshold => MaskKind::FilledThreshold,
            CbMaskKind::Hull => MaskKind::Hull,
        }
    }
}

/// Binary mask (opaque).
pub struct CbMask(BinaryMask);

/// Trained segmentation network (opaque).
pub struct CbModel(ModelWeights);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CbStatus {
    match e {
        Error::InvalidArgument(_) | Error::NonFinite(_) | Error::TooFewFrames { .. } => CbStatus::InvalidArgument,
        Error::Io { .. } | Error::MissingDirectory(_) => CbStatus::Io,
        Error::Malformed { .. } | Error::Decode { .. } => CbStatus::Malformed,
        Error::DimensionMismatch { .. } | Error::MixedDimensions { .. } => CbStatus::DimensionMismatch,
        _ => CbStatus::Other,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard<F>(f: F) -> CbStatus
where
    F: FnOnce() -> Result<(), CbError> + UnwindSafe,
{
    match catch_unwind(f) {
        Ok(Ok(())) => {
            set_error("");
            CbStatus::Ok
        }
        Ok(Err(CbError(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside coneboot");
            CbStatus::Panic
        }
    }
}

struct CbError(CbStatus, String);

impl From<Error> for CbError {
    fn from(e: Error) -> Self {
        CbError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> CbError {
    CbError(CbStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> CbError {
    CbError(CbStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], CbError> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], CbError> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out_ptr<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, CbError> {
    ptr.as_mut().ok_or_else(|| null(what))
}

fn plane(width: usize, height: usize) -> Result<usize, CbError> {
    width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("bad image size {width}x{height}")))
}

/// Message for the last failed call on this thread; empty after a
/// success. Valid until the next coneboot call on the same thread.
#[no_mangle]
pub extern "C" fn cb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn cb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a CV mask from `n_frames` 8-bit frames of `width × height`,
/// stored back to back row-major.
///
/// # Safety
/// `frames` must point to `n_frames * width * height` bytes; `out` must be
/// a valid pointer. The returned mask is released with [`cb_mask_free`].
#[no_mangle]
pub unsafe extern "C" fn cb_mask_generate(
    frames: *const u8,
    n_frames: usize,
    width: usize,
    height: usize,
    kind: CbMaskKind,
    block: usize,
    offset: f64,
    out: *mut *mut CbMask,
) -> CbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let px = plane(width, height)?;
        let total = px.checked_mul(n_frames).ok_or_else(|| invalid("frame buffer too large"))?;
        let bytes = slice(frames, total, "frames")?;
        let frames = bytes
            .chunks(px)
            .map(|c| Frame::from_bytes(width, height, c))
            .collect::<coneboot::Result<Vec<_>>>()?;
        let seq = FrameSequence::new("ffi", frames)?;
        let algo = MaskAlgorithm::new(kind.into()).with_threshold(block, offset);
        let mask = coneboot::maskgen::generate_mask(&seq, &algo)?;
        *out = Box::into_raw(Box::new(CbMask(mask)));
        Ok(())
    })
}

/// Wraps `width × height` bytes (nonzero = foreground) as a mask.
///
/// # Safety
/// `bytes` must point to `width * height` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cb_mask_from_bytes(
    bytes: *const u8,
    width: usize,
    height: usize,
    out: *mut *mut CbMask,
) -> CbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let data = slice(bytes, plane(width, height)?, "bytes")?;
        *out = Box::into_raw(Box::new(CbMask(BinaryMask::from_bytes(width, height, data)?)));
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cb_mask_free(mask: *mut CbMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// # Safety
/// `mask` must be a live handle; `width` and `height` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cb_mask_dims(mask: *const CbMask, width: *mut usize, height: *mut usize) -> CbStatus {
    guard(|| {
        let m = mask.as_ref().ok_or_else(|| null("mask"))?;
        *out_ptr(width, "width")? = m.0.width();
        *out_ptr(height, "height")? = m.0.height();
        Ok(())
    })
}

/// Copies the mask as 0/255 bytes into `out` (`len` must equal
/// width × height).
///
/// # Safety
/// `mask` must be a live handle and `out` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cb_mask_copy(mask: *const CbMask, out: *mut u8, len: usize) -> CbStatus {
    guard(|| {
        let m = mask.as_ref().ok_or_else(|| null("mask"))?;
        let bytes = m.0.to_bytes();
        if len != bytes.len() {
            return Err(CbError(
                CbStatus::DimensionMismatch,
                format!("buffer holds {len} bytes, mask has {}", bytes.len()),
            ));
        }
        slice_mut(out, len, "out")?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// (TP + TN) / pixels of `pred` against `truth` (same size).
///
/// # Safety
/// Both handles must be live; `accuracy` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cb_pixel_accuracy(
    pred: *const CbMask,
    truth: *const CbMask,
    accuracy: *mut f64,
) -> CbStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        let t = truth.as_ref().ok_or_else(|| null("truth"))?;
        *out_ptr(accuracy, "accuracy")? = pixel_accuracy(&p.0, &t.0)?;
        Ok(())
    })
}

/// Loads weights written by `coneboot train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cb_model_load(path: *const c_char, out: *mut *mut CbModel) -> CbStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        *out = Box::into_raw(Box::new(CbModel(load_weights(Path::new(path))?)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cb_model_free(model: *mut CbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Network input edge length in pixels.
///
/// # Safety
/// `model` must be a live handle; `size` valid.
#[no_mangle]
pub unsafe extern "C" fn cb_model_input_size(model: *const CbModel, size: *mut usize) -> CbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_ptr(size, "size")? = m.0.config().input_size;
        Ok(())
    })
}

/// Cone mask for one 8-bit frame, at the frame's resolution.
///
/// # Safety
/// `frame` must point to `width * height` bytes; handles must be valid.
#[no_mangle]
pub unsafe extern "C" fn cb_model_predict(
    model: *const CbModel,
    frame: *const u8,
    width: usize,
    height: usize,
    out: *mut *mut CbMask,
) -> CbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_ptr(out, "out")?;
        let f = Frame::from_bytes(width, height, slice(frame, plane(width, height)?, "frame")?)?;
        *out = Box::into_raw(Box::new(CbMask(predict_mask(&m.0, &f, Some((width, height)))?)));
        Ok(())
    })
}

/// De-identifies one 8-bit frame: pixels outside the predicted cone are
/// zeroed into `out` (`width * height` bytes; may equal `frame`).
///
/// # Safety
/// `frame` readable and `out` writable for `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn cb_deid_frame(
    model: *const CbModel,
    frame: *const u8,
    width: usize,
    height: usize,
    out: *mut u8,
) -> CbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = plane(width, height)?;
        let f = Frame::from_bytes(width, height, slice(frame, n, "frame")?)?;
        let mask = predict_mask(&m.0, &f, Some((width, height)))?;
        let masked = apply_mask(&f, &mask)?.to_bytes();
        slice_mut(out, n, "out")?.copy_from_slice(&masked);
        Ok(())
    })
}

/// Two-sided pooled Student t-test.
///
/// # Safety
/// `a` and `b` readable for `na` / `nb` doubles; `t` and `p` valid.
#[no_mangle]
pub unsafe extern "C" fn cb_t_test(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    t: *mut f64,
    p: *mut f64,
) -> CbStatus {
    guard(|| {
        let sa = SampleSet::new("a", slice(a, na, "a")?.to_vec())?;
        let sb = SampleSet::new("b", slice(b, nb, "b")?.to_vec())?;
        let r = students_t_test(&sa, &sb)?;
        *out_ptr(t, "t")? = r.t;
        *out_ptr(p, "p")? = r.p;
        Ok(())
    })
}

/// Holm–Bonferroni: ascending thresholds into `thresholds` and per-input
/// flags (1 = significant) into `significant`, both of length `m`.
///
/// # Safety
/// `p_values` readable, `thresholds` and `significant` writable, for `m`
/// elements each.
#[no_mangle]
pub unsafe extern "C" fn cb_holm_bonferroni(
    p_values: *const f64,
    m: usize,
    alpha: f64,
    thresholds: *mut f64,
    significant: *mut u8,
) -> CbStatus {
    guard(|| {
        let r = holm_bonferroni(slice(p_values, m, "p_values")?, alpha)?;
        slice_mut(thresholds, m, "thresholds")?.copy_from_slice(&r.thresholds);
        for (o, s) in slice_mut(significant, m, "significant")?.iter_mut().zip(&r.significant) {
            *o = *s as u8;
        }
        Ok(())
    })
}
