//! C interface to `jointseg`.
//!
//! Objects are opaque handles created by `jseg_*_new`/`jseg_*_parse` and
//! released by the matching `jseg_*_free`. Every fallible call returns a
//! [`JsegStatus`]; on failure, [`jseg_last_error`] describes the most recent
//! error on the calling thread. Images are row-major `double` arrays, label
//! maps row-major `uint16_t` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use jointseg::config::parse_config;
use jointseg::metrics::{self, MetricRow};
use jointseg::model::{IndicatorSet, ModelParams, SegState};
use jointseg::solver::{self, IterationLog, Segmenter};
use jointseg::{Error, ScalarField};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JsegStatus {
    Ok = 0,
    /// Null pointer, zero size or non-UTF-8 text.
    InvalidArgument = 1,
    Parameter = 2,
    Dimension = 3,
    Degenerate = 4,
    Contract = 5,
    Numerical = 6,
    Config = 7,
    Io = 8,
    /// The library panicked; this is a bug.
    Internal = 9,
}

impl From<&Error> for JsegStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parameter(_) => JsegStatus::Parameter,
            Error::Dimension(_) => JsegStatus::Dimension,
            Error::Degenerate(_) => JsegStatus::Degenerate,
            Error::Contract(_) => JsegStatus::Contract,
            Error::Numerical { .. } => JsegStatus::Numerical,
            Error::Config { .. } => JsegStatus::Config,
            Error::Format { .. } | Error::Io { .. } => JsegStatus::Io,
        }
    }
}

/// Scores of one phase against a reference.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JsegMetrics {
    pub dsc: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub kappa: f64,
}

/// Model and solver parameters.
pub struct JsegParams(ModelParams);

/// Precomputed operators for one image.
pub struct JsegSegmenter(Segmenter);

/// Final state and log of a segmentation run.
pub struct JsegResult {
    state: SegState,
    log: IterationLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let text = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

struct Fail(JsegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(JsegStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(JsegStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> JsegStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => JsegStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            JsegStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn pixels(width: usize, height: usize) -> Result<usize, Fail> {
    match width.checked_mul(height) {
        Some(n) if n > 0 => Ok(n),
        _ => Err(invalid(format!("bad raster size {width}x{height}"))),
    }
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn jseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Default parameters with `n_phases` phases.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn jseg_params_new(n_phases: usize, out: *mut *mut JsegParams) -> JsegStatus {
    guard(|| {
        let p = ModelParams::with_phases(n_phases);
        p.validate()?;
        out_ptr(out, JsegParams(p))
    })
}

/// Parameters from `key = value` text in the experiment-file syntax. Keys
/// that do not belong to the model (image sources, output paths) are
/// accepted and ignored.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jseg_params_parse(text: *const c_char, out: *mut *mut JsegParams) -> JsegStatus {
    guard(|| {
        if text.is_null() {
            return Err(invalid("text is null"));
        }
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| invalid("text is not UTF-8"))?;
        let cfg = parse_config(text, Path::new("<params>"))?;
        out_ptr(out, JsegParams(cfg.params))
    })
}

/// # Safety
/// `params` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn jseg_params_free(params: *mut JsegParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Prepares segmentation of a `width × height` image with nonnegative values.
///
/// # Safety
/// `image` must hold `width * height` values; `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn jseg_segmenter_new(
    params: *const JsegParams,
    image: *const f64,
    width: usize,
    height: usize,
    out: *mut *mut JsegSegmenter,
) -> JsegStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let n = pixels(width, height)?;
        let f = ScalarField::new(width, height, slice(image, n, "image")?.to_vec())?;
        out_ptr(out, JsegSegmenter(Segmenter::new(&f, &p.0)?))
    })
}

/// # Safety
/// As for [`jseg_params_free`].
#[no_mangle]
pub unsafe extern "C" fn jseg_segmenter_free(seg: *mut JsegSegmenter) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// Runs the alternating minimization from the label map `init`
/// (`width * height` labels below the phase count).
///
/// # Safety
/// `seg` must be live and `init` must hold one label per pixel.
#[no_mangle]
pub unsafe extern "C" fn jseg_segmenter_run(
    seg: *const JsegSegmenter,
    init: *const u16,
    out: *mut *mut JsegResult,
) -> JsegStatus {
    guard(|| {
        let seg = &deref(seg, "segmenter")?.0;
        let (w, h) = (seg.alpha().width(), seg.alpha().height());
        let labels = slice(init, w * h, "init")?.to_vec();
        let u = IndicatorSet::from_labels(w, h, seg.params().n_phases, labels)?;
        let (state, log) = seg.run(&u)?;
        out_ptr(out, JsegResult { state, log })
    })
}

/// # Safety
/// As for [`jseg_params_free`].
#[no_mangle]
pub unsafe extern "C" fn jseg_result_free(res: *mut JsegResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Raster width of a result, or 0 for null.
///
/// # Safety
/// `res` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_width(res: *const JsegResult) -> usize {
    res.as_ref().map_or(0, |r| r.state.g.width())
}

/// Raster height of a result, or 0 for null.
///
/// # Safety
/// `res` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_height(res: *const JsegResult) -> usize {
    res.as_ref().map_or(0, |r| r.state.g.height())
}

/// Number of outer iterations performed, or 0 for null.
///
/// # Safety
/// `res` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_outer_iterations(res: *const JsegResult) -> usize {
    res.as_ref().map_or(0, |r| r.log.outer.len())
}

/// Whether the partition stopped changing before `max_outer`.
///
/// # Safety
/// `res` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_converged(res: *const JsegResult) -> bool {
    res.as_ref().is_some_and(|r| r.log.converged)
}

/// Copies the final label map into `labels` (`len` = pixel count).
///
/// # Safety
/// `labels` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_labels(res: *const JsegResult, labels: *mut u16, len: usize) -> JsegStatus {
    guard(|| {
        let r = deref(res, "result")?;
        let src = r.state.u.labels();
        check_len(len, src.len())?;
        slice_mut(labels, len, "labels")?.copy_from_slice(src);
        Ok(())
    })
}

fn check_len(got: usize, want: usize) -> Result<(), Fail> {
    if got != want {
        return Err(Fail(
            JsegStatus::Dimension,
            format!("buffer holds {got} values, need {want}"),
        ));
    }
    Ok(())
}

unsafe fn copy_field(field: &ScalarField, out: *mut f64, len: usize) -> Result<(), Fail> {
    check_len(len, field.len())?;
    slice_mut(out, len, "output")?.copy_from_slice(field.values());
    Ok(())
}

/// Copies the denoised image `g` (input units).
///
/// # Safety
/// `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_denoised(res: *const JsegResult, out: *mut f64, len: usize) -> JsegStatus {
    guard(|| copy_field(&deref(res, "result")?.state.g, out, len))
}

/// Copies the bias field `b`.
///
/// # Safety
/// `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_bias(res: *const JsegResult, out: *mut f64, len: usize) -> JsegStatus {
    guard(|| copy_field(&deref(res, "result")?.state.b, out, len))
}

/// Copies the region constants `c` (`len` = phase count).
///
/// # Safety
/// `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn jseg_result_constants(res: *const JsegResult, out: *mut f64, len: usize) -> JsegStatus {
    guard(|| {
        let c = &deref(res, "result")?.state.c;
        check_len(len, c.len())?;
        slice_mut(out, len, "output")?.copy_from_slice(c);
        Ok(())
    })
}

/// Denoising alone (`b ≡ 1`, no fitting term); writes `g` into `out`.
///
/// # Safety
/// `image` and `out` must each hold `width * height` values.
#[no_mangle]
pub unsafe extern "C" fn jseg_denoise(
    params: *const JsegParams,
    image: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
) -> JsegStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let n = pixels(width, height)?;
        let f = ScalarField::new(width, height, slice(image, n, "image")?.to_vec())?;
        let (g, _) = solver::denoise(&f, &p.0)?;
        copy_field(&g, out, n)
    })
}

/// One-vs-rest scores of `phase` in `pred` against `truth`, both label maps
/// with `n_phases` phases over `len` pixels. Labels are compared as given,
/// without relabelling.
///
/// # Safety
/// `pred` and `truth` must hold `len` labels; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jseg_metrics(
    pred: *const u16,
    truth: *const u16,
    len: usize,
    n_phases: usize,
    phase: usize,
    out: *mut JsegMetrics,
) -> JsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        pixels(len, 1)?;
        let a = IndicatorSet::from_labels(len, 1, n_phases, slice(pred, len, "pred")?.to_vec())?;
        let b = IndicatorSet::from_labels(len, 1, n_phases, slice(truth, len, "truth")?.to_vec())?;
        let row = MetricRow::from_counts(&metrics::confusion_for_phase(&a, &b, phase)?)?;
        *out = JsegMetrics {
            dsc: row.dsc,
            iou: row.iou,
            accuracy: row.accuracy,
            kappa: row.kappa.value,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = jseg_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn params_round_trip_and_errors() {
        unsafe {
            let mut p = ptr::null_mut();
            assert_eq!(jseg_params_new(3, &mut p), JsegStatus::Ok);
            assert_eq!((*p).0.n_phases, 3);
            jseg_params_free(p);

            assert_eq!(jseg_params_new(1, &mut p), JsegStatus::Parameter);
            assert!(last_error().contains("phase"));

            let text = CString::new("gamma = 0.5\nmax_outer = 7\n").unwrap();
            assert_eq!(jseg_params_parse(text.as_ptr(), &mut p), JsegStatus::Ok);
            assert_eq!(((*p).0.gamma, (*p).0.max_outer), (0.5, 7));
            jseg_params_free(p);

            let bad = CString::new("bogus = 1\n").unwrap();
            assert_eq!(jseg_params_parse(bad.as_ptr(), &mut p), JsegStatus::Config);
            assert!(last_error().contains("bogus"));
            assert_eq!(jseg_params_parse(ptr::null(), &mut p), JsegStatus::InvalidArgument);
            jseg_params_free(ptr::null_mut());
        }
    }

    #[test]
    fn metrics_on_hand_counts() {
        // tp 1, fp 1, fn 0, tn 2
        let pred = [1u16, 1, 0, 0];
        let truth = [1u16, 0, 0, 0];
        let mut m = JsegMetrics::default();
        let s = unsafe { jseg_metrics(pred.as_ptr(), truth.as_ptr(), 4, 2, 1, &mut m) };
        assert_eq!(s, JsegStatus::Ok);
        assert!((m.dsc - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.iou - 0.5).abs() < 1e-15);
        assert!((m.accuracy - 0.75).abs() < 1e-15);
        assert!((m.kappa - 0.5).abs() < 1e-15);
        let s = unsafe { jseg_metrics(pred.as_ptr(), truth.as_ptr(), 4, 2, 5, &mut m) };
        assert_eq!(s, JsegStatus::Parameter);
    }

    #[test]
    fn segment_a_noiseless_disk() {
        let (w, h) = (32usize, 32usize);
        let inside = |i: usize| {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            (x - 16.0).powi(2) + (y - 16.0).powi(2) < 64.0
        };
        let image: Vec<f64> = (0..w * h).map(|i| if inside(i) { 180.0 } else { 40.0 }).collect();
        let init: Vec<u16> = (0..w * h).map(|i| u16::from(i % w < 12)).collect();
        unsafe {
            let mut p = ptr::null_mut();
            let text = CString::new("gamma = 0\nnu = 0\nupdate_denoised = false\n").unwrap();
            assert_eq!(jseg_params_parse(text.as_ptr(), &mut p), JsegStatus::Ok);
            let mut seg = ptr::null_mut();
            assert_eq!(jseg_segmenter_new(p, image.as_ptr(), w, h, &mut seg), JsegStatus::Ok);
            let mut res = ptr::null_mut();
            assert_eq!(jseg_segmenter_run(seg, init.as_ptr(), &mut res), JsegStatus::Ok);
            assert!(jseg_result_converged(res));
            assert!(jseg_result_outer_iterations(res) >= 1);
            assert_eq!((jseg_result_width(res), jseg_result_height(res)), (w, h));

            let mut labels = vec![0u16; w * h];
            assert_eq!(jseg_result_labels(res, labels.as_mut_ptr(), w * h), JsegStatus::Ok);
            let fg = labels[16 * w + 16];
            assert!((0..w * h).all(|i| (labels[i] == fg) == inside(i)));

            let mut c = [0.0; 2];
            assert_eq!(jseg_result_constants(res, c.as_mut_ptr(), 2), JsegStatus::Ok);
            assert_eq!(jseg_result_constants(res, c.as_mut_ptr(), 3), JsegStatus::Dimension);
            let mut g = vec![0.0; w * h];
            assert_eq!(jseg_result_denoised(res, g.as_mut_ptr(), w * h), JsegStatus::Ok);
            assert!(g.iter().zip(&image).all(|(a, b)| (a - b).abs() < 1e-9));
            assert_eq!(jseg_result_bias(res, g.as_mut_ptr(), w * h), JsegStatus::Ok);
            assert!(g.iter().all(|b| *b > 0.0));

            jseg_result_free(res);
            jseg_segmenter_free(seg);
            jseg_params_free(p);
        }
    }

    #[test]
    fn bad_arguments_are_reported() {
        unsafe {
            let mut p = ptr::null_mut();
            assert_eq!(jseg_params_new(2, &mut p), JsegStatus::Ok);
            let mut seg = ptr::null_mut();
            let image = [1.0f64; 4];
            assert_eq!(jseg_segmenter_new(p, ptr::null(), 2, 2, &mut seg), JsegStatus::InvalidArgument);
            assert_eq!(jseg_segmenter_new(p, image.as_ptr(), 0, 2, &mut seg), JsegStatus::InvalidArgument);
            let neg = [-1.0f64; 4];
            assert_eq!(jseg_segmenter_new(p, neg.as_ptr(), 2, 2, &mut seg), JsegStatus::Contract);
            assert!(last_error().contains("negative"));
            let mut out = [0.0f64; 4];
            assert_eq!(jseg_denoise(p, image.as_ptr(), 2, 2, out.as_mut_ptr()), JsegStatus::Ok);
            assert_eq!(jseg_result_width(ptr::null()), 0);
            jseg_params_free(p);
        }
    }
}
