//! C interface: load the two models from checkpoints, run two-stage
//! detection on an interleaved RGB buffer, score detections against points.
//!
//! Every fallible call returns a `MitosegStatus`. On failure the message is
//! kept per thread and read with `mitoseg_last_error`. Handles are opaque and
//! released with their matching `_free` function; passing NULL to a `_free`
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use image::RgbImage;
use mitoseg::classnet::ClassNet;
use mitoseg::metrics::{detection_metrics, match_points, Detection, Point};
use mitoseg::pipeline::{load_classnet, load_segnet, run_two_stage, CandidateClassifier, InferOptions, TiledSegmenter};
use mitoseg::segnet::SegNet;
use mitoseg::stain::StainProfile;
use mitoseg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MitosegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Contract = 5,
    Data = 6,
    Numeric = 7,
    InsufficientTissue = 8,
    Checkpoint = 9,
    Io = 10,
    Panic = 11,
}

impl From<&Error> for MitosegStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => MitosegStatus::Shape,
            Error::Config(_) => MitosegStatus::Config,
            Error::Contract(_) => MitosegStatus::Contract,
            Error::Data(_) => MitosegStatus::Data,
            Error::Numeric(_) => MitosegStatus::Numeric,
            Error::InsufficientTissue { .. } => MitosegStatus::InsufficientTissue,
            Error::Checkpoint { .. } => MitosegStatus::Checkpoint,
            Error::Io { .. } | Error::Image { .. } => MitosegStatus::Io,
        }
    }
}

/// Segmentation network loaded from a checkpoint.
pub struct MitosegSegModel {
    net: SegNet<f32>,
}

/// Candidate classifier loaded from a checkpoint.
pub struct MitosegClassModel {
    net: ClassNet<f32>,
}

/// Detections of one image, sorted by descending score.
pub struct MitosegDetectionList {
    items: Vec<MitosegDetection>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitosegDetection {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub area: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitosegInferOptions {
    pub seg_threshold: f32,
    pub class_threshold: f64,
    pub min_area: usize,
    pub crop_size: usize,
    pub tile_window: usize,
    pub stage1_only: bool,
    /// Stain-normalize to the built-in reference profile first.
    pub normalize: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MitosegMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(MitosegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(MitosegStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MitosegStatus::NullPointer, format!("`{what}` is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MitosegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MitosegStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MitosegStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MitosegStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mitoseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mitoseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn mitoseg_infer_options_default() -> MitosegInferOptions {
    let d = InferOptions::default();
    MitosegInferOptions {
        seg_threshold: d.seg_threshold,
        class_threshold: d.class_threshold,
        min_area: d.min_area,
        crop_size: d.crop_size,
        tile_window: d.tile_window,
        stage1_only: d.stage1_only,
        normalize: false,
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_seg_model_load(path: *const c_char, out: *mut *mut MitosegSegModel) -> MitosegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let net = load_segnet(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(MitosegSegModel { net }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `mitoseg_seg_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_seg_model_free(model: *mut MitosegSegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_class_model_load(
    path: *const c_char,
    out: *mut *mut MitosegClassModel,
) -> MitosegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let net = load_classnet(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(MitosegClassModel { net }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `mitoseg_class_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_class_model_free(model: *mut MitosegClassModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Two-stage detection on a `width` x `height` image of interleaved 8-bit
/// RGB rows, `stride` bytes apart (`stride >= 3 * width`). `cls` may be NULL
/// only when `opts->stage1_only` is set. `opts` may be NULL for defaults.
///
/// # Safety
/// `rgb` must point to at least `stride * (height - 1) + 3 * width` bytes.
/// Model pointers must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_detect(
    seg: *const MitosegSegModel,
    cls: *const MitosegClassModel,
    rgb: *const u8,
    width: u32,
    height: u32,
    stride: usize,
    opts: *const MitosegInferOptions,
    out: *mut *mut MitosegDetectionList,
) -> MitosegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let seg = seg.as_ref().ok_or_else(|| null("seg"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let row = 3 * width as usize;
        if width == 0 || height == 0 || stride < row {
            return Err(Fail(
                MitosegStatus::InvalidArgument,
                format!("bad image geometry {width}x{height} with stride {stride}"),
            ));
        }
        let o = if opts.is_null() { mitoseg_infer_options_default() } else { *opts };
        let cls = cls.as_ref();
        if cls.is_none() && !o.stage1_only {
            return Err(null("cls"));
        }
        let mut data = Vec::with_capacity(row * height as usize);
        for y in 0..height as usize {
            data.extend_from_slice(std::slice::from_raw_parts(rgb.add(y * stride), row));
        }
        let image = RgbImage::from_raw(width, height, data).expect("buffer sized to the image");
        let options = InferOptions {
            seg_threshold: o.seg_threshold,
            class_threshold: o.class_threshold,
            min_area: o.min_area,
            crop_size: o.crop_size,
            tile_window: o.tile_window,
            stage1_only: o.stage1_only,
            normalize_to: o.normalize.then(StainProfile::reference),
        };
        let tiled = TiledSegmenter {
            model: &seg.net,
            window: o.tile_window,
        };
        let dets = run_two_stage(&image, &tiled, cls.map(|c| &c.net as &dyn CandidateClassifier), &options)?;
        let items = dets.iter().map(to_c).collect();
        *out = Box::into_raw(Box::new(MitosegDetectionList { items }));
        Ok(())
    })
}

fn to_c(d: &Detection) -> MitosegDetection {
    MitosegDetection {
        x: d.centroid.x,
        y: d.centroid.y,
        score: d.score,
        area: d.area,
    }
}

/// Number of detections; 0 for NULL.
///
/// # Safety
/// `list` must be NULL or a live list.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_detections_len(list: *const MitosegDetectionList) -> usize {
    list.as_ref().map_or(0, |l| l.items.len())
}

/// Pointer to the first of `mitoseg_detections_len` contiguous detections,
/// owned by the list. NULL for NULL or empty lists.
///
/// # Safety
/// `list` must be NULL or a live list.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_detections_data(list: *const MitosegDetectionList) -> *const MitosegDetection {
    match list.as_ref() {
        Some(l) if !l.items.is_empty() => l.items.as_ptr(),
        _ => ptr::null(),
    }
}

/// # Safety
/// `list` must come from `mitoseg_detect` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mitoseg_detections_free(list: *mut MitosegDetectionList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

unsafe fn points(xy: *const f64, n: usize, what: &str) -> Result<Vec<Point>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if xy.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(xy, 2 * n)
        .chunks_exact(2)
        .map(|c| Point::new(c[0], c[1]))
        .collect())
}

/// Matches `n_pred` predicted against `n_truth` true centroids (both as
/// `x0, y0, x1, y1, ...`) one-to-one within `radius` and fills `out`.
///
/// # Safety
/// Each array must hold `2 * n` doubles (may be NULL when `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn mitoseg_detection_metrics(
    pred_xy: *const f64,
    n_pred: usize,
    truth_xy: *const f64,
    n_truth: usize,
    radius: f64,
    out: *mut MitosegMetrics,
) -> MitosegStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let preds = points(pred_xy, n_pred, "pred_xy")?;
        let truth = points(truth_xy, n_truth, "truth_xy")?;
        let c = match_points(&preds, &truth, radius)?.counts;
        let m = detection_metrics(c);
        *out = MitosegMetrics {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: m.precision,
            recall: m.recall,
            f_score: m.f_score,
        };
        Ok(())
    })
}
