//! C ABI for the detection pipeline, so other languages can bind the core
//! operations: interval math, score fusion, Soft-NMS, and file-based
//! inference with a trained checkpoint.
//!
//! Conventions:
//! - Every fallible call returns a [`TadStatus`]; `TAD_STATUS_OK` is zero.
//! - On failure, [`tad_last_error`] returns a message for the current thread,
//!   valid until the next API call on that thread.
//! - Handles (`TadModel`, `TadDetections`) are opaque; free them with their
//!   `_free` function exactly once. Passing null where a handle or output
//!   pointer is expected yields `TAD_STATUS_NULL_ARGUMENT`, never a crash.
//! - Scalar helpers (`tad_tiou`, ...) return NaN on invalid input instead of
//!   a status code.
//!
//! The authoritative header is generated into `include/tadet.h` at build
//! time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use tadet::assign::ActionLabel;
use tadet::decode::{decode_sequence, soft_nms, DecodeConfig, FusionMode, Proposal};
use tadet::formats::{read_checkpoint, read_feature_pyramid};
use tadet::heads::{confidence_scale, Heads};
use tadet::timeline::{giou_1d, tiou, PyramidConfig, TemporalInterval};

/// Result code of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TadStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument value was out of range or inconsistent.
    InvalidArgument = 2,
    /// A file could not be read.
    Io = 3,
    /// A file was read but its contents are invalid.
    Malformed = 4,
    /// An unexpected internal failure; report as a bug.
    Internal = 5,
}

/// Score-fusion mode for combining action and boundary probabilities.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TadFusionMode {
    ClsSqrtSe = 0,
    BoundaryOnly = 1,
    ClsOnly = 2,
    ClsS = 3,
    ClsE = 4,
    Mean3 = 5,
    Product3 = 6,
}

impl From<TadFusionMode> for FusionMode {
    fn from(m: TadFusionMode) -> Self {
        match m {
            TadFusionMode::ClsSqrtSe => FusionMode::ClsSqrtSe,
            TadFusionMode::BoundaryOnly => FusionMode::BoundaryOnly,
            TadFusionMode::ClsOnly => FusionMode::ClsOnly,
            TadFusionMode::ClsS => FusionMode::ClsS,
            TadFusionMode::ClsE => FusionMode::ClsE,
            TadFusionMode::Mean3 => FusionMode::Mean3,
            TadFusionMode::Product3 => FusionMode::Product3,
        }
    }
}

/// `noun` value reported for single-vocabulary labels, which have no noun.
pub const TAD_NO_NOUN: u32 = u32::MAX;

/// A loaded model (opaque).
pub struct TadModel {
    heads: Heads,
}

/// Decoded detections for one sequence (opaque).
pub struct TadDetections {
    items: Vec<Proposal>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let safe = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = safe);
}

fn fail(status: TadStatus, msg: &str) -> TadStatus {
    set_error(msg);
    status
}

/// Message for the most recent failure on this thread (empty if none).
/// The pointer stays valid until the next API call on the same thread.
#[no_mangle]
pub extern "C" fn tad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn interval(start: f64, end: f64) -> Option<TemporalInterval> {
    TemporalInterval::try_new(start, end).ok()
}

/// Temporal IoU of `[a_start, a_end]` and `[b_start, b_end]`.
/// NaN if either interval is invalid (non-finite or end < start).
#[no_mangle]
pub extern "C" fn tad_tiou(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> f64 {
    match (interval(a_start, a_end), interval(b_start, b_end)) {
        (Some(a), Some(b)) => tiou(&a, &b),
        _ => f64::NAN,
    }
}

/// Generalized IoU of two intervals (in [-1, 1]). NaN on invalid input.
#[no_mangle]
pub extern "C" fn tad_giou(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> f64 {
    match (interval(a_start, a_end), interval(b_start, b_end)) {
        (Some(a), Some(b)) => giou_1d(&a, &b),
        _ => f64::NAN,
    }
}

/// Gaussian confidence scaling of a boundary token: exp(-token^2 / (2 sigma^2)).
/// NaN if `sigma` is not a positive finite number.
#[no_mangle]
pub extern "C" fn tad_confidence_scale(token: f64, sigma: f64) -> f64 {
    if !(sigma.is_finite() && sigma > 0.0) || !token.is_finite() {
        return f64::NAN;
    }
    confidence_scale(token, sigma)
}

/// Fuse an action probability with start/end boundary confidences.
/// NaN on non-finite input.
#[no_mangle]
pub extern "C" fn tad_fuse_scores(
    mode: TadFusionMode,
    p_action: f64,
    p_start: f64,
    p_end: f64,
) -> f64 {
    if !(p_action.is_finite() && p_start.is_finite() && p_end.is_finite()) {
        return f64::NAN;
    }
    tadet::decode::fuse_scores(p_action, p_start, p_end, mode.into())
}

/// Class-aware Soft-NMS over parallel arrays of `count` proposals.
///
/// Kept proposals are written to the `out_*` arrays (each with capacity for
/// at least `count` elements) in ranking order, scores already decayed, and
/// their number to `out_count` (at most `max_keep`). Proposals only suppress
/// others with the same label.
#[no_mangle]
pub unsafe extern "C" fn tad_soft_nms(
    starts: *const f64,
    ends: *const f64,
    labels: *const u32,
    scores: *const f64,
    count: usize,
    decay_sigma: f64,
    score_floor: f64,
    max_keep: usize,
    out_starts: *mut f64,
    out_ends: *mut f64,
    out_labels: *mut u32,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> TadStatus {
    if out_count.is_null() {
        return fail(TadStatus::NullArgument, "out_count is null");
    }
    *out_count = 0;
    if count > 0 && (starts.is_null() || ends.is_null() || labels.is_null() || scores.is_null()) {
        return fail(TadStatus::NullArgument, "input array is null");
    }
    if count > 0
        && (out_starts.is_null() || out_ends.is_null() || out_labels.is_null()
            || out_scores.is_null())
    {
        return fail(TadStatus::NullArgument, "output array is null");
    }
    if !(decay_sigma.is_finite() && decay_sigma > 0.0) {
        return fail(
            TadStatus::InvalidArgument,
            &format!("decay_sigma must be positive, got {decay_sigma}"),
        );
    }
    if !score_floor.is_finite() {
        return fail(TadStatus::InvalidArgument, "score_floor must be finite");
    }
    let starts = std::slice::from_raw_parts(starts, count);
    let ends = std::slice::from_raw_parts(ends, count);
    let labels = std::slice::from_raw_parts(labels, count);
    let scores = std::slice::from_raw_parts(scores, count);
    let mut candidates = Vec::with_capacity(count);
    for i in 0..count {
        let Some(iv) = interval(starts[i], ends[i]) else {
            return fail(
                TadStatus::InvalidArgument,
                &format!("proposal {i}: invalid interval [{}, {}]", starts[i], ends[i]),
            );
        };
        if !scores[i].is_finite() {
            return fail(TadStatus::InvalidArgument, &format!("proposal {i}: non-finite score"));
        }
        candidates.push(Proposal {
            interval: iv,
            label: ActionLabel::Single(labels[i]),
            score: scores[i],
        });
    }
    let kept = soft_nms(&candidates, decay_sigma, score_floor, max_keep);
    for (i, p) in kept.iter().enumerate() {
        *out_starts.add(i) = p.interval.start;
        *out_ends.add(i) = p.interval.end;
        *out_labels.add(i) = match p.label {
            ActionLabel::Single(c) => c,
            ActionLabel::VerbNoun { .. } => unreachable!("inputs are single-labeled"),
        };
        *out_scores.add(i) = p.score;
    }
    *out_count = kept.len();
    TadStatus::Ok
}

fn c_path<'a>(ptr: *const c_char) -> Result<&'a Path, TadStatus> {
    if ptr.is_null() {
        set_error("path is null");
        return Err(TadStatus::NullArgument);
    }
    let s = unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("path is not valid UTF-8");
        TadStatus::InvalidArgument
    })?;
    Ok(Path::new(s))
}

fn format_status(e: &tadet::formats::FormatError) -> TadStatus {
    match e {
        tadet::formats::FormatError::Io { .. } => TadStatus::Io,
        tadet::formats::FormatError::Malformed { .. } => TadStatus::Malformed,
    }
}

/// Load a model checkpoint; on success `*out` owns the handle.
#[no_mangle]
pub unsafe extern "C" fn tad_model_load(
    ckpt_path: *const c_char,
    out: *mut *mut TadModel,
) -> TadStatus {
    if out.is_null() {
        return fail(TadStatus::NullArgument, "out is null");
    }
    *out = std::ptr::null_mut();
    let path = match c_path(ckpt_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match read_checkpoint(path) {
        Ok(heads) => {
            *out = Box::into_raw(Box::new(TadModel { heads }));
            TadStatus::Ok
        }
        Err(e) => fail(format_status(&e), &e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn tad_model_free(model: *mut TadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimension the model was trained on.
#[no_mangle]
pub unsafe extern "C" fn tad_model_feature_dim(model: *const TadModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).heads.cfg.feature_dim as u32
}

/// Width of the model's classification output (classes, or verbs + nouns).
#[no_mangle]
pub unsafe extern "C" fn tad_model_class_width(model: *const TadModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).heads.cfg.vocab.width() as u32
}

/// Run the model over one feature-pyramid file and decode detections.
///
/// `frame_rate` converts the file's level-0 grid to seconds; `sigma` is the
/// confidence-scaling width; everything else uses default decode settings
/// with the given fusion mode. On success `*out` owns the detections.
#[no_mangle]
pub unsafe extern "C" fn tad_detect_file(
    model: *const TadModel,
    features_path: *const c_char,
    frame_rate: f64,
    fusion: TadFusionMode,
    sigma: f64,
    out: *mut *mut TadDetections,
) -> TadStatus {
    if out.is_null() {
        return fail(TadStatus::NullArgument, "out is null");
    }
    *out = std::ptr::null_mut();
    if model.is_null() {
        return fail(TadStatus::NullArgument, "model is null");
    }
    let path = match c_path(features_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return fail(
            TadStatus::InvalidArgument,
            &format!("frame_rate must be positive, got {frame_rate}"),
        );
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return fail(TadStatus::InvalidArgument, &format!("sigma must be positive, got {sigma}"));
    }
    let features = match read_feature_pyramid(path) {
        Ok(f) => f,
        Err(e) => return fail(format_status(&e), &e.to_string()),
    };
    let heads = &(*model).heads;
    if features.dim() != heads.cfg.feature_dim {
        return fail(
            TadStatus::InvalidArgument,
            &format!(
                "feature dim {} does not match model dim {}",
                features.dim(),
                heads.cfg.feature_dim
            ),
        );
    }
    let pyr_cfg = PyramidConfig {
        num_levels: features.levels.len(),
        base_length: features.base_length(),
        scale_factor: 2,
        frame_rate,
    };
    if let Err(e) = pyr_cfg.validate().and_then(|()| features.check_against(&pyr_cfg)) {
        return fail(TadStatus::InvalidArgument, &e);
    }
    let dcfg = DecodeConfig { fusion: fusion.into(), ..DecodeConfig::default() };
    let result = catch_unwind(AssertUnwindSafe(|| {
        let (outputs, _) = heads.forward(&pyr_cfg, &features, sigma);
        decode_sequence(&pyr_cfg, &outputs, &heads.cfg.vocab, &dcfg)
    }));
    match result {
        Ok(items) => {
            *out = Box::into_raw(Box::new(TadDetections { items }));
            TadStatus::Ok
        }
        Err(_) => fail(TadStatus::Internal, "internal panic during inference"),
    }
}

/// Number of detections in the handle (0 for null).
#[no_mangle]
pub unsafe extern "C" fn tad_detections_count(dets: *const TadDetections) -> usize {
    if dets.is_null() {
        return 0;
    }
    (*dets).items.len()
}

/// Read one detection. For single-vocabulary models `*out_verb` is the class
/// id and `*out_noun` is `TAD_NO_NOUN`. Null output pointers are skipped.
#[no_mangle]
pub unsafe extern "C" fn tad_detections_get(
    dets: *const TadDetections,
    index: usize,
    out_start: *mut f64,
    out_end: *mut f64,
    out_verb: *mut u32,
    out_noun: *mut u32,
    out_score: *mut f64,
) -> TadStatus {
    if dets.is_null() {
        return fail(TadStatus::NullArgument, "detections handle is null");
    }
    let items = &(*dets).items;
    let Some(p) = items.get(index) else {
        return fail(
            TadStatus::InvalidArgument,
            &format!("index {index} out of range ({} detections)", items.len()),
        );
    };
    if !out_start.is_null() {
        *out_start = p.interval.start;
    }
    if !out_end.is_null() {
        *out_end = p.interval.end;
    }
    let (verb, noun) = match p.label {
        ActionLabel::Single(c) => (c, TAD_NO_NOUN),
        ActionLabel::VerbNoun { verb, noun } => (verb, noun),
    };
    if !out_verb.is_null() {
        *out_verb = verb;
    }
    if !out_noun.is_null() {
        *out_noun = noun;
    }
    if !out_score.is_null() {
        *out_score = p.score;
    }
    TadStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn tad_detections_free(dets: *mut TadDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use tadet::assign::ClassVocab;
    use tadet::formats::{write_checkpoint, write_feature_pyramid};
    use tadet::heads::HeadConfig;

    #[test]
    fn scalar_helpers_match_core_and_reject_bad_input() {
        assert_eq!(tad_tiou(0.0, 2.0, 1.0, 3.0), 1.0 / 3.0);
        assert!(tad_tiou(2.0, 1.0, 0.0, 1.0).is_nan(), "reversed interval");
        assert!(tad_tiou(f64::NAN, 1.0, 0.0, 1.0).is_nan());
        assert_eq!(tad_confidence_scale(0.0, 5.5), 1.0);
        assert!(tad_confidence_scale(0.0, 0.0).is_nan());
        assert!(tad_confidence_scale(0.0, -1.0).is_nan());
        let fused = tad_fuse_scores(TadFusionMode::ClsSqrtSe, 0.5, 0.81, 0.25);
        assert_eq!(fused, 0.5 * (0.81f64 * 0.25).sqrt());
        assert!(tad_fuse_scores(TadFusionMode::Mean3, f64::INFINITY, 0.5, 0.5).is_nan());
    }

    #[test]
    fn giou_disjoint_worked_value() {
        // [0,1] vs [3,4]: IoU 0, hull 4, uncovered 2 -> GIoU = -1/2.
        assert_eq!(tad_giou(0.0, 1.0, 3.0, 4.0), -0.5);
    }

    #[test]
    fn soft_nms_ffi_roundtrip() {
        let starts = [0.0, 0.1, 10.0];
        let ends = [5.0, 5.2, 15.0];
        let labels = [1u32, 1, 1];
        let scores = [0.9, 0.8, 0.7];
        let mut out_starts = [0.0; 3];
        let mut out_ends = [0.0; 3];
        let mut out_labels = [0u32; 3];
        let mut out_scores = [0.0; 3];
        let mut out_count = 0usize;
        let status = unsafe {
            tad_soft_nms(
                starts.as_ptr(),
                ends.as_ptr(),
                labels.as_ptr(),
                scores.as_ptr(),
                3,
                0.5,
                1e-3,
                10,
                out_starts.as_mut_ptr(),
                out_ends.as_mut_ptr(),
                out_labels.as_mut_ptr(),
                out_scores.as_mut_ptr(),
                &mut out_count,
            )
        };
        assert_eq!(status, TadStatus::Ok);
        assert_eq!(out_count, 3);
        // Top proposal unchanged; the heavy overlap is decayed below 0.8.
        assert_eq!((out_starts[0], out_scores[0]), (0.0, 0.9));
        assert_eq!(out_starts[1], 10.0, "disjoint proposal keeps its score");
        assert_eq!(out_scores[1], 0.7);
        assert_eq!(out_starts[2], 0.1);
        assert!(out_scores[2] < 0.8);

        // Null input array -> clean error.
        let status = unsafe {
            tad_soft_nms(
                std::ptr::null(),
                ends.as_ptr(),
                labels.as_ptr(),
                scores.as_ptr(),
                3,
                0.5,
                1e-3,
                10,
                out_starts.as_mut_ptr(),
                out_ends.as_mut_ptr(),
                out_labels.as_mut_ptr(),
                out_scores.as_mut_ptr(),
                &mut out_count,
            )
        };
        assert_eq!(status, TadStatus::NullArgument);
        assert_eq!(out_count, 0);
        let msg = unsafe { CStr::from_ptr(tad_last_error()) }.to_str().unwrap();
        assert!(msg.contains("null"), "{msg}");
    }

    #[test]
    fn model_load_detect_and_free() {
        let dir = tempfile::TempDir::new().unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let fpy = dir.path().join("x.fpy");
        let cfg = HeadConfig {
            feature_dim: 4,
            hidden_width: 6,
            vocab: ClassVocab::Single { num_classes: 2 },
            confidence_scaling: true,
        };
        write_checkpoint(&ckpt, &Heads::init(cfg, 7)).unwrap();
        let mut level0 = tadet::features::FeatureMap::zeros(4, 32);
        for (i, v) in level0.data.iter_mut().enumerate() {
            *v = ((i % 13) as f64 - 6.0) * 0.1;
        }
        write_feature_pyramid(&fpy, &tadet::features::FeaturePyramid::from_level0(level0, 3))
            .unwrap();

        let ckpt_c = CString::new(ckpt.to_str().unwrap()).unwrap();
        let fpy_c = CString::new(fpy.to_str().unwrap()).unwrap();
        let mut model: *mut TadModel = std::ptr::null_mut();
        let status = unsafe { tad_model_load(ckpt_c.as_ptr(), &mut model) };
        assert_eq!(status, TadStatus::Ok);
        assert!(!model.is_null());
        assert_eq!(unsafe { tad_model_feature_dim(model) }, 4);
        assert_eq!(unsafe { tad_model_class_width(model) }, 2);

        let mut dets: *mut TadDetections = std::ptr::null_mut();
        let status = unsafe {
            tad_detect_file(model, fpy_c.as_ptr(), 8.0, TadFusionMode::ClsSqrtSe, 5.5, &mut dets)
        };
        assert_eq!(status, TadStatus::Ok, "{:?}", unsafe {
            CStr::from_ptr(tad_last_error()).to_str()
        });
        let n = unsafe { tad_detections_count(dets) };
        assert!(n > 0, "untrained logits still clear the default floor");
        let (mut s, mut e, mut v, mut nn, mut sc) = (0.0, 0.0, 0u32, 0u32, 0.0);
        let status = unsafe {
            tad_detections_get(dets, 0, &mut s, &mut e, &mut v, &mut nn, &mut sc)
        };
        assert_eq!(status, TadStatus::Ok);
        assert!(e >= s && s >= 0.0);
        assert!(v < 2 && nn == TAD_NO_NOUN);
        assert!(sc > 0.0 && sc.is_finite());
        // Out-of-range index is a clean error.
        let status = unsafe {
            tad_detections_get(dets, n, &mut s, &mut e, &mut v, &mut nn, &mut sc)
        };
        assert_eq!(status, TadStatus::InvalidArgument);

        unsafe {
            tad_detections_free(dets);
            tad_model_free(model);
        }
    }

    #[test]
    fn load_failures_set_status_and_message() {
        let mut model: *mut TadModel = std::ptr::null_mut();
        let missing = CString::new("/nonexistent/q.ckpt").unwrap();
        let status = unsafe { tad_model_load(missing.as_ptr(), &mut model) };
        assert_eq!(status, TadStatus::Io);
        assert!(model.is_null());

        let dir = tempfile::TempDir::new().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk_c = CString::new(junk.to_str().unwrap()).unwrap();
        let status = unsafe { tad_model_load(junk_c.as_ptr(), &mut model) };
        assert_eq!(status, TadStatus::Malformed);
        let msg = unsafe { CStr::from_ptr(tad_last_error()) }.to_str().unwrap();
        assert!(msg.contains("magic"), "{msg}");

        let status = unsafe { tad_model_load(std::ptr::null(), &mut model) };
        assert_eq!(status, TadStatus::NullArgument);
    }
}
