//! On-disk formats: annotations (JSON), feature pyramids (binary), model
//! checkpoints (binary), detections (JSON), loss traces (CSV), and small SVG
//! plots.
//!
//! All writes go through a temp-file-then-rename so a crash never leaves a
//! half-written artifact, and all outputs are byte-deterministic given the
//! same data. Binary parsing reports the byte offset of the first problem.
//!
//! Units: annotation segments and detections are in seconds; each video
//! carries its own `frame_rate` for conversion to the level-0 feature grid.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{ActionLabel, ClassVocab, GroundTruthSegment};
use crate::decode::Proposal;
use crate::eval::{BoundaryErrorCurves, EvalReport, EvalVideo};
use crate::features::{FeatureMap, FeaturePyramid};
use crate::heads::{HeadConfig, HeadParams, Heads};
use crate::losses::{LossBreakdown, LossConfig};
use crate::synth::SynthDataset;
use crate::timeline::TemporalInterval;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Malformed { path: PathBuf, msg: String },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn bad(path: &Path, msg: impl Into<String>) -> Self {
        Self::Malformed { path: path.to_path_buf(), msg: msg.into() }
    }
}

/// Write `bytes` to `path` atomically (temp file in the same directory, then
/// rename), creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| FormatError::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| FormatError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| FormatError::io(&tmp, e))?;
        f.sync_all().map_err(|e| FormatError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

// ---------------------------------------------------------------------------
// Annotations (JSON)

pub const ANNOTATION_VERSION: u32 = 1;

/// One annotated segment, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub start_seconds: f64,
    pub end_seconds: f64,
    pub label: ActionLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotations {
    pub id: String,
    pub duration_seconds: f64,
    /// Level-0 feature frames per second.
    pub frame_rate: f64,
    pub segments: Vec<SegmentAnnotation>,
}

impl VideoAnnotations {
    /// Level-0 length implied by duration and frame rate.
    pub fn num_frames(&self) -> usize {
        (self.duration_seconds * self.frame_rate).round() as usize
    }
}

/// The dataset manifest: a version tag, the class vocabulary, and per-video
/// annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub version: u32,
    pub vocab: ClassVocab,
    pub videos: Vec<VideoAnnotations>,
}

impl AnnotationFile {
    pub fn validate(&self) -> Result<(), String> {
        if self.version != ANNOTATION_VERSION {
            return Err(format!(
                "unsupported annotation version {} (expected {ANNOTATION_VERSION})",
                self.version
            ));
        }
        if self.vocab.width() == 0 {
            return Err("empty class vocabulary".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for video in &self.videos {
            if !seen.insert(&video.id) {
                return Err(format!("duplicate video id '{}'", video.id));
            }
            if !(video.frame_rate.is_finite() && video.frame_rate > 0.0) {
                return Err(format!(
                    "video '{}': frame_rate must positive, got {}",
                    video.id, video.frame_rate
                ));
            }
            if !(video.duration_seconds.is_finite() && video.duration_seconds > 0.0) {
                return Err(format!(
                    "video '{}': duration_seconds must be positive, got {}",
                    video.id, video.duration_seconds
                ));
            }
            for (si, seg) in video.segments.iter().enumerate() {
                let what = || format!("video '{}' segment {si}", video.id);
                if !(seg.start_seconds.is_finite() && seg.end_seconds.is_finite()) {
                    return Err(format!("{}: non-finite boundaries", what()));
                }
                if seg.end_seconds <= seg.start_seconds {
                    return Err(format!(
                        "{}: end {} does not follow start {}",
                        what(),
                        seg.end_seconds,
                        seg.start_seconds
                    ));
                }
                if seg.start_seconds < 0.0 || seg.end_seconds > video.duration_seconds {
                    return Err(format!(
                        "{}: [{}, {}] outside the {}-second video",
                        what(),
                        seg.start_seconds,
                        seg.end_seconds,
                        video.duration_seconds
                    ));
                }
                self.vocab.check_label(&seg.label).map_err(|e| format!("{}: {e}", what()))?;
            }
        }
        Ok(())
    }

    /// One video's segments in seconds, for evaluation.
    pub fn ground_truth_seconds(&self, video: &VideoAnnotations) -> Vec<GroundTruthSegment> {
        video
            .segments
            .iter()
            .map(|s| GroundTruthSegment {
                interval: TemporalInterval::new(s.start_seconds, s.end_seconds),
                label: s.label,
            })
            .collect()
    }

    /// One video's segments on the level-0 feature grid, for assignment.
    pub fn ground_truth_frames(&self, video: &VideoAnnotations) -> Vec<GroundTruthSegment> {
        video
            .segments
            .iter()
            .map(|s| GroundTruthSegment {
                interval: TemporalInterval::new(
                    s.start_seconds * video.frame_rate,
                    s.end_seconds * video.frame_rate,
                ),
                label: s.label,
            })
            .collect()
    }
}

pub fn write_annotations(path: &Path, file: &AnnotationFile) -> Result<(), FormatError> {
    file.validate().map_err(|e| FormatError::bad(path, e))?;
    let mut json = serde_json::to_string_pretty(file)
        .map_err(|e| FormatError::bad(path, e.to_string()))?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

pub fn read_annotations(path: &Path) -> Result<AnnotationFile, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let file: AnnotationFile =
        serde_json::from_str(&text).map_err(|e| FormatError::bad(path, e.to_string()))?;
    file.validate().map_err(|e| FormatError::bad(path, e))?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// Feature pyramids (binary, magic "FPY1")
//
// Layout, all little-endian:
//   "FPY1" | u32 num_levels | per level: u32 length, u32 dim | payload
// The payload holds each level in order, row-major: `length` rows of `dim`
// f32 values. The header carries a dim per level; this implementation
// requires them all equal.

const FEATURE_MAGIC: &[u8; 4] = b"FPY1";

pub fn write_feature_pyramid(path: &Path, pyr: &FeaturePyramid) -> Result<(), FormatError> {
    if pyr.levels.is_empty() {
        return Err(FormatError::bad(path, "refusing to write an empty pyramid"));
    }
    let dim = pyr.dim();
    let mut bytes = Vec::with_capacity(8 + pyr.levels.len() * 8 + pyr.total_locations() * dim * 4);
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(pyr.levels.len() as u32).to_le_bytes());
    for level in &pyr.levels {
        bytes.extend_from_slice(&(level.len as u32).to_le_bytes());
        bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for level in &pyr.levels {
        for i in 0..level.len {
            for c in 0..dim {
                bytes.extend_from_slice(&(level.get(c, i) as f32).to_le_bytes());
            }
        }
    }
    write_atomic(path, &bytes)
}

/// Little parser that tracks its offset for error messages.
struct ByteParser<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteParser<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.data.len() {
            return Err(FormatError::bad(
                self.path,
                format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.data.len()
                ),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_feature_pyramid(path: &Path) -> Result<FeaturePyramid, FormatError> {
    let data = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let mut p = ByteParser { data: &data, pos: 0, path };
    if p.take(4)? != FEATURE_MAGIC {
        return Err(FormatError::bad(path, "bad magic: not a feature-pyramid file"));
    }
    let num_levels = p.u32()? as usize;
    if num_levels == 0 || num_levels > 32 {
        return Err(FormatError::bad(path, format!("implausible level count {num_levels}")));
    }
    let mut shapes: Vec<(usize, usize)> = Vec::with_capacity(num_levels);
    for li in 0..num_levels {
        let at = p.pos;
        let (len, dim) = (p.u32()? as usize, p.u32()? as usize);
        if len == 0 || dim == 0 || dim > 65536 {
            return Err(FormatError::bad(
                path,
                format!("implausible shape ({len}, {dim}) for level {li} at offset {at}"),
            ));
        }
        if li > 0 && dim != shapes[0].1 {
            return Err(FormatError::bad(
                path,
                format!("level {li} dim {dim} differs from level 0 dim {}", shapes[0].1),
            ));
        }
        shapes.push((len, dim));
    }
    let mut levels = Vec::with_capacity(num_levels);
    for &(len, dim) in &shapes {
        let mut level = FeatureMap::zeros(dim, len);
        for i in 0..len {
            for c in 0..dim {
                let at = p.pos;
                let v = p.f32()?;
                if !v.is_finite() {
                    return Err(FormatError::bad(
                        path,
                        format!("non-finite feature value at byte offset {at}"),
                    ));
                }
                level.set(c, i, v as f64);
            }
        }
        levels.push(level);
    }
    if p.pos != data.len() {
        return Err(FormatError::bad(
            path,
            format!("{} trailing bytes after payload at offset {}", data.len() - p.pos, p.pos),
        ));
    }
    Ok(FeaturePyramid { levels })
}

// ---------------------------------------------------------------------------
// Checkpoints (binary, magic "TADC")
//
// Layout: "TADC" | u32 version | u32 header_len | header JSON (HeadConfig) |
// per layer in fixed order: u32 out_ch | u32 in_ch | u32 kernel | weights f32
// | biases f32. Parameters are stored as f32.

const CHECKPOINT_MAGIC: &[u8; 4] = b"TADC";
const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, heads: &Heads) -> Result<(), FormatError> {
    let header = serde_json::to_string(&heads.cfg)
        .map_err(|e| FormatError::bad(path, e.to_string()))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for layer in heads.params.layers() {
        bytes.extend_from_slice(&(layer.out_ch as u32).to_le_bytes());
        bytes.extend_from_slice(&(layer.in_ch as u32).to_le_bytes());
        bytes.extend_from_slice(&(layer.kernel as u32).to_le_bytes());
        for &w in &layer.w {
            bytes.extend_from_slice(&(w as f32).to_le_bytes());
        }
        for &b in &layer.b {
            bytes.extend_from_slice(&(b as f32).to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Heads, FormatError> {
    let data = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let mut p = ByteParser { data: &data, pos: 0, path };
    if p.take(4)? != CHECKPOINT_MAGIC {
        return Err(FormatError::bad(path, "bad magic: not a checkpoint file"));
    }
    let version = p.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::bad(
            path,
            format!("unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"),
        ));
    }
    let header_len = p.u32()? as usize;
    let header = std::str::from_utf8(p.take(header_len)?)
        .map_err(|_| FormatError::bad(path, "checkpoint header is not UTF-8"))?;
    let cfg: HeadConfig =
        serde_json::from_str(header).map_err(|e| FormatError::bad(path, e.to_string()))?;
    cfg.validate().map_err(|e| FormatError::bad(path, e))?;
    let mut params = HeadParams::zeros(&cfg);
    for layer in params.layers_mut() {
        let at = p.pos;
        let (out_ch, in_ch, kernel) = (p.u32()? as usize, p.u32()? as usize, p.u32()? as usize);
        if (out_ch, in_ch, kernel) != (layer.out_ch, layer.in_ch, layer.kernel) {
            return Err(FormatError::bad(
                path,
                format!(
                    "layer shape ({out_ch}, {in_ch}, {kernel}) at offset {at} does not match \
                     config shape ({}, {}, {})",
                    layer.out_ch, layer.in_ch, layer.kernel
                ),
            ));
        }
        for w in &mut layer.w {
            let at = p.pos;
            let v = p.f32()?;
            if !v.is_finite() {
                return Err(FormatError::bad(
                    path,
                    format!("non-finite weight at byte offset {at}"),
                ));
            }
            *w = v as f64;
        }
        for b in &mut layer.b {
            *b = p.f32()? as f64;
        }
    }
    if p.pos != data.len() {
        return Err(FormatError::bad(
            path,
            format!("{} trailing bytes after parameters", data.len() - p.pos),
        ));
    }
    Ok(Heads { cfg, params })
}

// ---------------------------------------------------------------------------
// Detections (JSON, seconds)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub start_seconds: f64,
    pub end_seconds: f64,
    pub label: ActionLabel,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDetections {
    pub id: String,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub version: u32,
    pub videos: Vec<VideoDetections>,
}

impl DetectionsFile {
    pub fn from_proposals(videos: Vec<(String, Vec<Proposal>)>) -> Self {
        Self {
            version: ANNOTATION_VERSION,
            videos: videos
                .into_iter()
                .map(|(id, props)| VideoDetections {
                    id,
                    detections: props
                        .into_iter()
                        .map(|p| DetectionRecord {
                            start_seconds: p.interval.start,
                            end_seconds: p.interval.end,
                            label: p.label,
                            score: p.score,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.version != ANNOTATION_VERSION {
            return Err(format!("unsupported detections version {}", self.version));
        }
        for video in &self.videos {
            for (di, d) in video.detections.iter().enumerate() {
                if !(d.start_seconds.is_finite()
                    && d.end_seconds.is_finite()
                    && d.end_seconds >= d.start_seconds)
                {
                    return Err(format!(
                        "video '{}' detection {di}: bad interval [{}, {}]",
                        video.id, d.start_seconds, d.end_seconds
                    ));
                }
                if !d.score.is_finite() {
                    return Err(format!("video '{}' detection {di}: non-finite score", video.id));
                }
            }
        }
        Ok(())
    }
}

pub fn write_detections(path: &Path, file: &DetectionsFile) -> Result<(), FormatError> {
    file.validate().map_err(|e| FormatError::bad(path, e))?;
    let mut json = serde_json::to_string_pretty(file)
        .map_err(|e| FormatError::bad(path, e.to_string()))?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

pub fn read_detections(path: &Path) -> Result<DetectionsFile, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let file: DetectionsFile =
        serde_json::from_str(&text).map_err(|e| FormatError::bad(path, e.to_string()))?;
    file.validate().map_err(|e| FormatError::bad(path, e))?;
    Ok(file)
}

/// Pair detections with annotations by video id for evaluation. Videos
/// without detections evaluate with an empty detection list; detections for
/// unknown ids or labels outside the vocabulary are an error.
pub fn pair_for_eval(
    annotations: &AnnotationFile,
    detections: &DetectionsFile,
) -> Result<Vec<EvalVideo>, String> {
    let mut dets_by_id: std::collections::BTreeMap<&str, &VideoDetections> =
        std::collections::BTreeMap::new();
    for video in &detections.videos {
        if dets_by_id.insert(video.id.as_str(), video).is_some() {
            return Err(format!("duplicate detections for video '{}'", video.id));
        }
        for d in &video.detections {
            annotations
                .vocab
                .check_label(&d.label)
                .map_err(|e| format!("video '{}': {e}", video.id))?;
        }
    }
    let known: std::collections::BTreeSet<&str> =
        annotations.videos.iter().map(|v| v.id.as_str()).collect();
    for id in dets_by_id.keys() {
        if !known.contains(id) {
            return Err(format!("detections for unknown video '{id}'"));
        }
    }
    Ok(annotations
        .videos
        .iter()
        .map(|video| EvalVideo {
            ground_truth: annotations.ground_truth_seconds(video),
            detections: dets_by_id
                .get(video.id.as_str())
                .map(|vd| {
                    vd.detections
                        .iter()
                        .map(|d| Proposal {
                            interval: TemporalInterval::new(d.start_seconds, d.end_seconds),
                            label: d.label,
                            score: d.score,
                        })
                        .collect()
                })
                .unwrap_or_default(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Synthetic dataset layout: <dir>/annotations.json + <dir>/features/<id>.fpy

pub fn write_synth_dataset(dir: &Path, ds: &SynthDataset) -> Result<(), FormatError> {
    let fr = ds.config.frame_rate;
    let annotations = AnnotationFile {
        version: ANNOTATION_VERSION,
        vocab: ds.config.vocab(),
        videos: ds
            .sequences
            .iter()
            .map(|seq| VideoAnnotations {
                id: seq.id.clone(),
                duration_seconds: ds.config.sequence_length as f64 / fr,
                frame_rate: fr,
                segments: seq
                    .segments
                    .iter()
                    .map(|s| SegmentAnnotation {
                        start_seconds: s.interval.start / fr,
                        end_seconds: s.interval.end / fr,
                        label: s.label,
                    })
                    .collect(),
            })
            .collect(),
    };
    write_annotations(&dir.join("annotations.json"), &annotations)?;
    for seq in &ds.sequences {
        write_feature_pyramid(&dir.join("features").join(format!("{}.fpy", seq.id)), &seq.features)?;
    }
    Ok(())
}

/// A sequence loaded back from disk, ready for assignment or inference.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub id: String,
    pub frame_rate: f64,
    pub features: FeaturePyramid,
    /// Ground truth on the level-0 feature grid.
    pub segments: Vec<GroundTruthSegment>,
}

/// Load every sequence listed in an annotation file, checking that features
/// agree with the manifest.
pub fn load_sequences(
    annotations: &AnnotationFile,
    features_dir: &Path,
) -> Result<Vec<LoadedSequence>, FormatError> {
    let mut out = Vec::with_capacity(annotations.videos.len());
    let mut dim: Option<usize> = None;
    for video in &annotations.videos {
        let path = features_dir.join(format!("{}.fpy", video.id));
        let features = read_feature_pyramid(&path)?;
        if features.base_length() != video.num_frames() {
            return Err(FormatError::bad(
                &path,
                format!(
                    "features have {} frames but annotations imply {} ({} s at {} fps)",
                    features.base_length(),
                    video.num_frames(),
                    video.duration_seconds,
                    video.frame_rate
                ),
            ));
        }
        match dim {
            None => dim = Some(features.dim()),
            Some(d) if d != features.dim() => {
                return Err(FormatError::bad(
                    &path,
                    format!("feature dim {} differs from earlier sequences ({d})", features.dim()),
                ));
            }
            _ => {}
        }
        out.push(LoadedSequence {
            id: video.id.clone(),
            frame_rate: video.frame_rate,
            features,
            segments: annotations.ground_truth_frames(video),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Loss trace (CSV) and eval report (JSON / CSV)

pub fn write_loss_trace_csv(
    path: &Path,
    trace: &[LossBreakdown],
    cfg: &LossConfig,
) -> Result<(), FormatError> {
    let mut text = String::from("step,cls,giou,conf_start,conf_end,total\n");
    for (step, row) in trace.iter().enumerate() {
        text.push_str(&format!(
            "{step},{},{},{},{},{}\n",
            row.cls,
            row.giou,
            row.conf_start,
            row.conf_end,
            row.total(cfg)
        ));
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_eval_report_json(path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| FormatError::bad(path, e.to_string()))?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}

/// Per-class AP table as CSV: one row per class, one column per threshold.
pub fn write_ap_table_csv(path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    let mut text = String::from("label,num_gt");
    for t in &report.thresholds {
        text.push_str(&format!(",ap@{t}"));
    }
    text.push('\n');
    for row in &report.per_class_ap {
        let label = match row.label {
            ActionLabel::Single(c) => c.to_string(),
            ActionLabel::VerbNoun { verb, noun } => format!("{verb}/{noun}"),
        };
        text.push_str(&format!("{label},{}", row.num_gt));
        for ap in &row.ap {
            text.push_str(&format!(",{ap}"));
        }
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

// ---------------------------------------------------------------------------
// SVG plots

/// Comment-safe version of a provenance string (XML comments cannot contain
/// `--`).
fn sanitize_comment(s: &str) -> String {
    s.replace("--", "==")
}

/// Map data points into a polyline string for a fixed plot box.
fn svg_polyline(points: &[(f64, f64)], x_range: (f64, f64), y_range: (f64, f64)) -> String {
    const X0: f64 = 50.0;
    const Y0: f64 = 20.0;
    const W: f64 = 520.0;
    const H: f64 = 300.0;
    let (x_lo, x_hi) = x_range;
    let (y_lo, y_hi) = y_range;
    let x_span = (x_hi - x_lo).max(1e-12);
    let y_span = (y_hi - y_lo).max(1e-12);
    points
        .iter()
        .map(|&(x, y)| {
            let px = X0 + (x - x_lo) / x_span * W;
            let py = Y0 + H - (y - y_lo) / y_span * H;
            format!("{px:.2},{py:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn svg_chart(title: &str, x_label: &str, y_label: &str, provenance: &str, body: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"380\" ",
            "viewBox=\"0 0 600 380\">\n",
            "<!-- {provenance} -->\n",
            "<rect width=\"600\" height=\"380\" fill=\"white\"/>\n",
            "<text x=\"300\" y=\"14\" text-anchor=\"middle\" font-size=\"13\" ",
            "font-family=\"sans-serif\">{title}</text>\n",
            "<rect x=\"50\" y=\"20\" width=\"520\" height=\"300\" fill=\"none\" ",
            "stroke=\"#999\"/>\n",
            "<text x=\"300\" y=\"350\" text-anchor=\"middle\" font-size=\"11\" ",
            "font-family=\"sans-serif\">{x_label}</text>\n",
            "<text x=\"14\" y=\"170\" text-anchor=\"middle\" font-size=\"11\" ",
            "font-family=\"sans-serif\" transform=\"rotate(-90 14 170)\">{y_label}</text>\n",
            "{body}\n",
            "</svg>\n"
        ),
        provenance = sanitize_comment(provenance),
        title = title,
        x_label = x_label,
        y_label = y_label,
        body = body,
    )
}

/// Total-loss curve over training steps. `provenance` is embedded as a
/// comment so the plot names its inputs.
pub fn write_loss_curve_svg(
    path: &Path,
    trace: &[LossBreakdown],
    cfg: &LossConfig,
    provenance: &str,
) -> Result<(), FormatError> {
    if trace.is_empty() {
        return Err(FormatError::bad(path, "empty loss trace"));
    }
    let totals: Vec<(f64, f64)> =
        trace.iter().enumerate().map(|(i, b)| (i as f64, b.total(cfg))).collect();
    let y_hi = totals.iter().map(|p| p.1).fold(f64::MIN, f64::max).max(1e-9);
    let pts = svg_polyline(&totals, (0.0, (trace.len() - 1).max(1) as f64), (0.0, y_hi));
    let body = format!(
        "<polyline points=\"{pts}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n\
         <text x=\"560\" y=\"34\" text-anchor=\"end\" font-size=\"10\" \
         font-family=\"sans-serif\">max {y_hi:.4}</text>"
    );
    let svg = svg_chart("training loss", "step", "total loss", provenance, &body);
    write_atomic(path, svg.as_bytes())
}

/// Cumulative boundary-error curves (start and end side).
pub fn write_boundary_curves_svg(
    path: &Path,
    curves: &BoundaryErrorCurves,
    provenance: &str,
) -> Result<(), FormatError> {
    if curves.grid.is_empty() {
        return Err(FormatError::bad(path, "empty boundary-error grid"));
    }
    let x_hi = *curves.grid.last().unwrap();
    let to_points = |cdf: &[f64]| -> Vec<(f64, f64)> {
        curves.grid.iter().copied().zip(cdf.iter().copied()).collect()
    };
    let start_pts = svg_polyline(&to_points(&curves.start_cdf), (0.0, x_hi), (0.0, 1.0));
    let end_pts = svg_polyline(&to_points(&curves.end_cdf), (0.0, x_hi), (0.0, 1.0));
    let body = format!(
        "<polyline points=\"{start_pts}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\"/>\n\
         <polyline points=\"{end_pts}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n\
         <text x=\"560\" y=\"34\" text-anchor=\"end\" font-size=\"10\" \
         font-family=\"sans-serif\" fill=\"#1f77b4\">start</text>\n\
         <text x=\"560\" y=\"48\" text-anchor=\"end\" font-size=\"10\" \
         font-family=\"sans-serif\" fill=\"#d62728\">end ({} matched)</text>",
        curves.num_matched
    );
    let svg = svg_chart(
        "cumulative boundary error",
        "absolute error (seconds)",
        "fraction of matches",
        provenance,
        &body,
    );
    write_atomic(path, svg.as_bytes())
}
