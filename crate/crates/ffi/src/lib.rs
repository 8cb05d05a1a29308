//! C ABI over the covstream library.
//!
//! Every fallible function returns a [`CovstreamStatus`]; on failure a
//! description is kept per thread and can be read with
//! [`covstream_last_error`]. Handles are opaque and must be released with
//! their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use covstream::nalgebra::{DMatrix, DVector};
use covstream::recognizer::{EventKind, RecognizerState, TrainedModel};
use covstream::{
    io, stein_divergence, Error, SkeletonFrame, SpdMatrix, WeightedCovarianceState, WeightedFrame,
};

/// Result codes. Codes 1 to 3 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovstreamStatus {
    Ok = 0,
    /// An argument value is out of range.
    InvalidArgument = 1,
    /// Malformed or inconsistent input data.
    DataError = 2,
    /// A factorization or update recurrence failed.
    NumericalError = 3,
    NullPointer = 4,
    /// An internal panic was caught at the boundary.
    Internal = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovstreamEventKind {
    InitialDecision = 0,
    Continuation = 1,
    Boundary = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovstreamEvent {
    pub frame_index: usize,
    pub label: u32,
    pub kind: CovstreamEventKind,
}

/// Weighted covariance of a feature stream.
pub struct CovstreamCovariance {
    state: WeightedCovarianceState,
}

/// A trained model together with the state of one stream.
pub struct CovstreamRecognizer {
    model: TrainedModel,
    state: RecognizerState,
    reset_on_boundary: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CovstreamStatus {
    match e.exit_code() {
        1 => CovstreamStatus::InvalidArgument,
        3 => CovstreamStatus::NumericalError,
        _ => CovstreamStatus::DataError,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CovstreamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CovstreamStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CovstreamStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            CovstreamStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(non_null(p, what)?, len))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::InvalidConfig(msg.into()))
}

/// Description of the last failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn covstream_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Stein divergence between two row-major `dim x dim` SPD matrices.
///
/// # Safety
/// `x` and `y` must point to `dim * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn covstream_stein_divergence(
    x: *const f64,
    y: *const f64,
    dim: usize,
    out: *mut f64,
) -> CovstreamStatus {
    guard(|| {
        let out = non_null(out, "out")? as *mut f64;
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let x = SpdMatrix::new(DMatrix::from_row_slice(dim, dim, slice(x, dim * dim, "x")?))?;
        let y = SpdMatrix::new(DMatrix::from_row_slice(dim, dim, slice(y, dim * dim, "y")?))?;
        *out = stein_divergence(&x, &y)?;
        Ok(())
    })
}

/// Starts a weighted covariance from `frames` row-major feature vectors of
/// length `dim`. `weights` may be NULL for unit frame weights.
///
/// # Safety
/// `features` must point to `frames * dim` doubles and `weights`, when not
/// NULL, to `frames` doubles. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn covstream_covariance_new(
    features: *const f64,
    weights: *const f64,
    frames: usize,
    dim: usize,
    decay: f64,
    out: *mut *mut CovstreamCovariance,
) -> CovstreamStatus {
    guard(|| {
        let out = non_null(out, "out")? as *mut *mut CovstreamCovariance;
        *out = ptr::null_mut();
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(0.0..=1.0).contains(&decay) {
            return Err(invalid(format!("decay must lie in [0, 1], got {decay}")));
        }
        let data = slice(features, frames * dim, "features")?;
        let w = if weights.is_null() {
            None
        } else {
            Some(slice(weights, frames, "weights")?)
        };
        let batch: Vec<WeightedFrame> = data
            .chunks_exact(dim)
            .enumerate()
            .map(|(i, f)| {
                WeightedFrame::new(DVector::from_column_slice(f), w.map_or(1.0, |w| w[i]))
            })
            .collect();
        let state = WeightedCovarianceState::initialize(&batch, decay)?;
        *out = Box::into_raw(Box::new(CovstreamCovariance { state }));
        Ok(())
    })
}

/// Folds one frame into the covariance.
///
/// # Safety
/// `handle` must come from [`covstream_covariance_new`]; `feature` must
/// point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn covstream_covariance_update(
    handle: *mut CovstreamCovariance,
    feature: *const f64,
    dim: usize,
    weight: f64,
) -> CovstreamStatus {
    guard(|| {
        let h = &mut *(non_null(handle, "handle")? as *mut CovstreamCovariance);
        let f = slice(feature, dim, "feature")?;
        h.state
            .update(&WeightedFrame::new(DVector::from_column_slice(f), weight))?;
        Ok(())
    })
}

/// Feature dimension of the covariance, or 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or come from [`covstream_covariance_new`].
#[no_mangle]
pub unsafe extern "C" fn covstream_covariance_dim(handle: *const CovstreamCovariance) -> usize {
    handle.as_ref().map_or(0, |h| h.state.dim())
}

/// Frames folded in so far, or 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or come from [`covstream_covariance_new`].
#[no_mangle]
pub unsafe extern "C" fn covstream_covariance_frame_count(
    handle: *const CovstreamCovariance,
) -> usize {
    handle.as_ref().map_or(0, |h| h.state.frame_count())
}

/// Copies the row-major covariance (`dim * dim`) and the mean (`dim`).
/// Either output may be NULL.
///
/// # Safety
/// Non-NULL outputs must have room for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn covstream_covariance_read(
    handle: *const CovstreamCovariance,
    cov_out: *mut f64,
    mean_out: *mut f64,
) -> CovstreamStatus {
    guard(|| {
        let h = &*non_null(handle, "handle")?;
        let d = h.state.dim();
        if !cov_out.is_null() {
            let c = h.state.cov();
            for i in 0..d {
                for j in 0..d {
                    *cov_out.add(i * d + j) = c[(i, j)];
                }
            }
        }
        if !mean_out.is_null() {
            ptr::copy_nonoverlapping(h.state.mean().as_ptr(), mean_out, d);
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or come from [`covstream_covariance_new`] and not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn covstream_covariance_free(handle: *mut CovstreamCovariance) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Loads a model file written by `covstream train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_load(
    path: *const c_char,
    out: *mut *mut CovstreamRecognizer,
) -> CovstreamStatus {
    guard(|| {
        let out = non_null(out, "out")? as *mut *mut CovstreamRecognizer;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(non_null(path, "path")?)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let model = io::read_model(Path::new(path))?;
        let state = model.new_state();
        *out = Box::into_raw(Box::new(CovstreamRecognizer {
            model,
            state,
            reset_on_boundary: false,
        }));
        Ok(())
    })
}

/// Joints per frame expected by the model, or 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or come from [`covstream_recognizer_load`].
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_joint_count(
    handle: *const CovstreamRecognizer,
) -> usize {
    handle.as_ref().map_or(0, |h| h.model.layout.joint_count())
}

/// Number of classes, or 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or come from [`covstream_recognizer_load`].
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_class_count(
    handle: *const CovstreamRecognizer,
) -> usize {
    handle.as_ref().map_or(0, |h| h.model.classes.len())
}

/// Writes up to `capacity` class labels in ascending order and returns the
/// class count.
///
/// # Safety
/// `labels` must have room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_labels(
    handle: *const CovstreamRecognizer,
    labels: *mut u32,
    capacity: usize,
) -> usize {
    let Some(h) = handle.as_ref() else { return 0 };
    let all = h.model.labels();
    if !labels.is_null() {
        for (i, l) in all.iter().take(capacity).enumerate() {
            *labels.add(i) = *l;
        }
    }
    all.len()
}

/// Re-initializes the covariance at each detected boundary.
///
/// # Safety
/// `handle` must come from [`covstream_recognizer_load`].
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_set_reset_on_boundary(
    handle: *mut CovstreamRecognizer,
    enabled: bool,
) -> CovstreamStatus {
    guard(|| {
        (*(non_null(handle, "handle")? as *mut CovstreamRecognizer)).reset_on_boundary = enabled;
        Ok(())
    })
}

/// Feeds one frame of `joint_count` xyz triples. `*has_event` is set to 1
/// and `*event` filled when the frame produced a decision, else 0.
///
/// # Safety
/// `joints` must point to `3 * joint_count` doubles; `event` and
/// `has_event` must be writable.
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_push_frame(
    handle: *mut CovstreamRecognizer,
    joints: *const f64,
    joint_count: usize,
    event: *mut CovstreamEvent,
    has_event: *mut i32,
) -> CovstreamStatus {
    guard(|| {
        let h = &mut *(non_null(handle, "handle")? as *mut CovstreamRecognizer);
        let event = non_null(event, "event")? as *mut CovstreamEvent;
        let has_event = non_null(has_event, "has_event")? as *mut i32;
        *has_event = 0;
        let coords = slice(joints, 3 * joint_count, "joints")?;
        let frame =
            SkeletonFrame::new(coords.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect());
        let outcome = h.model.step(&mut h.state, &frame, h.reset_on_boundary)?;
        if let Some(e) = outcome.event {
            *event = CovstreamEvent {
                frame_index: e.frame_index,
                label: e.label,
                kind: match e.kind {
                    EventKind::InitialDecision => CovstreamEventKind::InitialDecision,
                    EventKind::Continuation => CovstreamEventKind::Continuation,
                    EventKind::Boundary => CovstreamEventKind::Boundary,
                },
            };
            *has_event = 1;
        }
        Ok(())
    })
}

/// Forgets the stream seen so far.
///
/// # Safety
/// `handle` must come from [`covstream_recognizer_load`].
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_reset(
    handle: *mut CovstreamRecognizer,
) -> CovstreamStatus {
    guard(|| {
        let h = &mut *(non_null(handle, "handle")? as *mut CovstreamRecognizer);
        h.state = h.model.new_state();
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or come from [`covstream_recognizer_load`] and not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn covstream_recognizer_free(handle: *mut CovstreamRecognizer) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
