//! Label assignment: ground-truth annotations to per-location training targets.
//!
//! Three ingredients per pyramid location:
//!
//! * classification targets and regression offsets via center sampling
//!   (positive only in the middle window of an action, shortest action wins
//!   on overlap),
//! * boundary-confidence targets from the overlap of a one-stride region
//!   around the location with a `d/5` region around each ground-truth
//!   boundary,
//! * a per-step training mask keeping only positives whose current predicted
//!   interval reaches a GIoU threshold.

use serde::{Deserialize, Serialize};

use crate::timeline::{giou_1d, PyramidConfig, PyramidLocation, TemporalInterval};

/// Class annotation of one segment: a single class id, or a verb/noun pair.
///
/// Serialized untagged, so annotation JSON reads `"label": 3` for the single
/// case and `"label": {"verb": 1, "noun": 2}` for the pair case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionLabel {
    Single(u32),
    VerbNoun { verb: u32, noun: u32 },
}

/// Declared class vocabulary; fixes the width of classification targets.
///
/// Serialized untagged: `{num_classes}` or `{num_verbs, num_nouns}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassVocab {
    Single { num_classes: usize },
    VerbNoun { num_verbs: usize, num_nouns: usize },
}

impl ClassVocab {
    /// Number of one-vs-all channels: `C`, or `V + N` for the verb/noun case.
    pub fn width(&self) -> usize {
        match self {
            ClassVocab::Single { num_classes } => *num_classes,
            ClassVocab::VerbNoun { num_verbs, num_nouns } => num_verbs + num_nouns,
        }
    }

    pub fn check_label(&self, label: &ActionLabel) -> Result<(), String> {
        match (self, label) {
            (ClassVocab::Single { num_classes }, ActionLabel::Single(c)) => {
                if (*c as usize) < *num_classes {
                    Ok(())
                } else {
                    Err(format!("class id {c} outside vocabulary of {num_classes}"))
                }
            }
            (ClassVocab::VerbNoun { num_verbs, num_nouns }, ActionLabel::VerbNoun { verb: v, noun: n }) => {
                if (*v as usize) < *num_verbs && (*n as usize) < *num_nouns {
                    Ok(())
                } else {
                    Err(format!("verb/noun ({v}, {n}) outside vocabulary ({num_verbs}, {num_nouns})"))
                }
            }
            _ => Err("label kind does not match vocabulary kind".into()),
        }
    }
}

/// One annotated action, in level-0 feature-frame units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSegment {
    pub interval: TemporalInterval,
    pub label: ActionLabel,
}

/// Per-location training targets for one sequence, stored flat in
/// level-major location order (the order of `pyramid_locations`).
///
/// `r_start`/`r_end` and `assigned` are meaningful only where `is_positive`;
/// `p_start`/`p_end` are defined everywhere (zero far from boundaries);
/// `cls_omit` marks locations inside an action but outside every center
/// window, which the classification loss ignores entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationTargets {
    pub num_locations: usize,
    pub class_width: usize,
    pub class_targets: Vec<f64>,
    pub r_start: Vec<f64>,
    pub r_end: Vec<f64>,
    pub p_start: Vec<f64>,
    pub p_end: Vec<f64>,
    pub is_positive: Vec<bool>,
    pub cls_omit: Vec<bool>,
    pub assigned: Vec<Option<TemporalInterval>>,
}

impl LocationTargets {
    pub fn num_positive(&self) -> usize {
        self.is_positive.iter().filter(|p| **p).count()
    }

    /// Full assignment: regression/classification part plus confidence targets.
    pub fn assign(
        cfg: &PyramidConfig,
        locations: &[PyramidLocation],
        segments: &[GroundTruthSegment],
        vocab: &ClassVocab,
        alpha: u32,
    ) -> Result<LocationTargets, String> {
        let mut targets = assign_regression_targets(cfg, locations, segments, vocab, alpha)?;
        let (p_start, p_end) = boundary_confidence_targets(cfg, locations, segments);
        targets.p_start = p_start;
        targets.p_end = p_end;
        Ok(targets)
    }
}

fn validate_segments(
    segments: &[GroundTruthSegment],
    vocab: &ClassVocab,
) -> Result<(), String> {
    for (i, seg) in segments.iter().enumerate() {
        if seg.interval.length() <= 0.0 {
            return Err(format!(
                "segment {i} has non-positive length ({} .. {})",
                seg.interval.start, seg.interval.end
            ));
        }
        vocab.check_label(&seg.label).map_err(|e| format!("segment {i}: {e}"))?;
    }
    Ok(())
}

/// Center-sampling assignment of classification and regression targets.
///
/// A location `t` at stride `s` is positive for a segment when it lies
/// strictly inside it and either sits within `alpha * s / 2` of the segment
/// center or the segment is shorter than `alpha * s` (so short actions keep
/// at least their interior locations). Among qualifying segments the shortest
/// wins. Locations inside an action that qualify for none are marked
/// `cls_omit` and skipped by the classification loss.
pub fn assign_regression_targets(
    cfg: &PyramidConfig,
    locations: &[PyramidLocation],
    segments: &[GroundTruthSegment],
    vocab: &ClassVocab,
    alpha: u32,
) -> Result<LocationTargets, String> {
    if alpha < 1 {
        return Err(format!("center window alpha must be >= 1, got {alpha}"));
    }
    validate_segments(segments, vocab)?;

    let n = locations.len();
    let width = vocab.width();
    let mut targets = LocationTargets {
        num_locations: n,
        class_width: width,
        class_targets: vec![0.0; n * width],
        r_start: vec![0.0; n],
        r_end: vec![0.0; n],
        p_start: vec![0.0; n],
        p_end: vec![0.0; n],
        is_positive: vec![false; n],
        cls_omit: vec![false; n],
        assigned: vec![None; n],
    };

    for (i, loc) in locations.iter().enumerate() {
        let stride = loc.stride(cfg);
        let window = alpha as f64 * stride;
        let mut best: Option<&GroundTruthSegment> = None;
        let mut inside_any = false;
        for seg in segments {
            let iv = &seg.interval;
            if iv.start <= loc.t && loc.t <= iv.end {
                inside_any = true;
            }
            if !iv.contains_strict(loc.t) {
                continue;
            }
            let central = (loc.t - iv.center()).abs() <= 0.5 * window || iv.length() < window;
            if !central {
                continue;
            }
            // Shortest containing segment wins; earlier segment wins ties.
            if best.is_none_or(|b| iv.length() < b.interval.length()) {
                best = Some(seg);
            }
        }
        match best {
            Some(seg) => {
                targets.is_positive[i] = true;
                targets.r_start[i] = loc.t - seg.interval.start;
                targets.r_end[i] = seg.interval.end - loc.t;
                targets.assigned[i] = Some(seg.interval);
                match seg.label {
                    ActionLabel::Single(c) => targets.class_targets[i * width + c as usize] = 1.0,
                    ActionLabel::VerbNoun { verb: v, noun: n_id } => {
                        let verb_count = match vocab {
                            ClassVocab::VerbNoun { num_verbs, .. } => *num_verbs,
                            ClassVocab::Single { .. } => unreachable!("label checked against vocab"),
                        };
                        targets.class_targets[i * width + v as usize] = 1.0;
                        targets.class_targets[i * width + verb_count + n_id as usize] = 1.0;
                    }
                }
            }
            None => {
                targets.cls_omit[i] = inside_any;
            }
        }
    }
    Ok(targets)
}

/// Ground-truth boundary-confidence curves sampled at every location.
///
/// `p_start(t)` is the largest overlap ratio, over segments, between the
/// one-stride region centered on `t` and the region of length `d/5` centered
/// on the segment start (`d` the segment length); `p_end` mirrors it for
/// segment ends. The ratio denominator is the location-region length.
pub fn boundary_confidence_targets(
    cfg: &PyramidConfig,
    locations: &[PyramidLocation],
    segments: &[GroundTruthSegment],
) -> (Vec<f64>, Vec<f64>) {
    let n = locations.len();
    let mut p_start = vec![0.0; n];
    let mut p_end = vec![0.0; n];
    // Overlap of [t - s/2, t + s/2] with [b - d/10, b + d/10], taken in
    // coordinates relative to the boundary b, so the result depends only on
    // t - b and shifting everything by a constant cannot change it.
    let overlap_ratio = |delta: f64, half: f64, tenth: f64| -> f64 {
        let lo = (delta - half).max(-tenth);
        let hi = (delta + half).min(tenth);
        (hi - lo).max(0.0) / (2.0 * half)
    };
    for (i, loc) in locations.iter().enumerate() {
        let stride = loc.stride(cfg);
        let half = 0.5 * stride;
        let mut best_s = 0.0_f64;
        let mut best_e = 0.0_f64;
        for seg in segments {
            let tenth = seg.interval.length() / 10.0;
            best_s = best_s.max(overlap_ratio(loc.t - seg.interval.start, half, tenth));
            best_e = best_e.max(overlap_ratio(loc.t - seg.interval.end, half, tenth));
        }
        p_start[i] = best_s.clamp(0.0, 1.0);
        p_end[i] = best_e.clamp(0.0, 1.0);
    }
    (p_start, p_end)
}

/// Per-step confidence-training mask.
///
/// True exactly at positive locations whose current predicted interval
/// reaches GIoU `beta` against the assigned ground truth. The count of true
/// entries is the `T` normalizer of the confidence losses. Recomputed every
/// step since it depends on live predictions; treated as a constant within
/// the step.
pub fn confidence_training_mask(
    predicted: &[TemporalInterval],
    targets: &LocationTargets,
    beta: f64,
) -> Vec<bool> {
    assert!((-1.0..=1.0).contains(&beta), "beta must lie in [-1, 1], got {beta}");
    assert_eq!(predicted.len(), targets.num_locations);
    (0..targets.num_locations)
        .map(|i| match (targets.is_positive[i], &targets.assigned[i]) {
            (true, Some(gt)) => giou_1d(&predicted[i], gt) >= beta,
            _ => false,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::pyramid_locations;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flat_cfg(len: usize) -> PyramidConfig {
        PyramidConfig { num_levels: 1, base_length: len, scale_factor: 2, frame_rate: 1.0 }
    }

    fn seg(s: f64, e: f64, c: u32) -> GroundTruthSegment {
        GroundTruthSegment { interval: TemporalInterval::new(s, e), label: ActionLabel::Single(c) }
    }

    const VOCAB2: ClassVocab = ClassVocab::Single { num_classes: 2 };

    #[test]
    fn center_location_is_positive_with_symmetric_offsets() {
        let cfg = flat_cfg(32);
        let locs = pyramid_locations(&cfg);
        let t = assign_regression_targets(&cfg, &locs, &[seg(10.0, 20.0, 0)], &VOCAB2, 3).unwrap();
        assert!(t.is_positive[15]);
        assert_eq!(t.r_start[15], 5.0);
        assert_eq!(t.r_end[15], 5.0);
        assert_eq!(t.class_targets[15 * 2], 1.0);
    }

    #[test]
    fn boundary_location_is_not_positive() {
        let cfg = flat_cfg(32);
        let locs = pyramid_locations(&cfg);
        let t = assign_regression_targets(&cfg, &locs, &[seg(10.0, 20.0, 0)], &VOCAB2, 3).unwrap();
        assert!(!t.is_positive[10]);
        // Inside the action but outside the center window: ignored by the cls loss.
        assert!(t.cls_omit[11]);
        assert!(!t.cls_omit[3]);
    }

    #[test]
    fn shortest_segment_wins_overlap() {
        let cfg = flat_cfg(32);
        let locs = pyramid_locations(&cfg);
        let segs = [seg(10.0, 20.0, 0), seg(12.0, 16.0, 1)];
        let t = assign_regression_targets(&cfg, &locs, &segs, &VOCAB2, 3).unwrap();
        assert!(t.is_positive[14]);
        assert_eq!(t.r_start[14], 2.0);
        assert_eq!(t.r_end[14], 2.0);
        assert_eq!(t.class_targets[14 * 2 + 1], 1.0);
        assert_eq!(t.class_targets[14 * 2], 0.0);
    }

    #[test]
    fn short_segments_keep_interior_locations() {
        // Length-2 segment, alpha*stride = 3 > 2: strict interior is positive.
        let cfg = flat_cfg(32);
        let locs = pyramid_locations(&cfg);
        let t = assign_regression_targets(&cfg, &locs, &[seg(4.5, 6.5, 0)], &VOCAB2, 3).unwrap();
        assert!(t.is_positive[5] && t.is_positive[6]);
        assert!(!t.is_positive[4] && !t.is_positive[7]);
        assert!(t.r_start[5] > 0.0 && t.r_end[6] > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = flat_cfg(8);
        let locs = pyramid_locations(&cfg);
        assert!(assign_regression_targets(&cfg, &locs, &[seg(1.0, 4.0, 0)], &VOCAB2, 0).is_err());
        assert!(assign_regression_targets(&cfg, &locs, &[seg(4.0, 4.0, 0)], &VOCAB2, 3).is_err());
        assert!(assign_regression_targets(&cfg, &locs, &[seg(1.0, 4.0, 7)], &VOCAB2, 3).is_err());
    }

    #[test]
    fn confidence_target_worked_examples() {
        let cfg = flat_cfg(32);
        let locs = pyramid_locations(&cfg);
        let (p_s, _) = boundary_confidence_targets(&cfg, &locs, &[seg(10.0, 20.0, 0)]);
        assert_abs_diff_eq!(p_s[10], 1.0);
        assert_abs_diff_eq!(p_s[11], 0.5);
        assert_abs_diff_eq!(p_s[13], 0.0);
    }

    #[test]
    fn confidence_targets_take_max_over_segments() {
        let cfg = flat_cfg(64);
        let locs = pyramid_locations(&cfg);
        let segs = [seg(10.0, 20.0, 0), seg(10.5, 40.5, 1)];
        let (p_s, _) = boundary_confidence_targets(&cfg, &locs, &segs);
        let (p_s_a, _) = boundary_confidence_targets(&cfg, &locs, &segs[..1]);
        let (p_s_b, _) = boundary_confidence_targets(&cfg, &locs, &segs[1..]);
        for i in 0..locs.len() {
            assert_abs_diff_eq!(p_s[i], p_s_a[i].max(p_s_b[i]));
        }
    }

    #[test]
    fn near_start_location_reaches_half_confidence() {
        // For d >= 5 * stride the location nearest the start overlaps at least half.
        let cfg = flat_cfg(64);
        let locs = pyramid_locations(&cfg);
        for (s, e) in [(7.25, 13.0), (3.0, 40.0), (11.9, 17.0)] {
            let (p_s, _) = boundary_confidence_targets(&cfg, &locs, &[seg(s, e, 0)]);
            let nearest = locs
                .iter()
                .min_by(|a, b| (a.t - s).abs().partial_cmp(&(b.t - s).abs()).unwrap())
                .unwrap();
            assert!(p_s[nearest.index] >= 0.5, "p_s={} at start {s}", p_s[nearest.index]);
        }
    }

    #[test]
    fn mask_needs_positive_location_and_good_giou() {
        let cfg = flat_cfg(32);
        let locs = pyramid_locations(&cfg);
        let t = LocationTargets::assign(&cfg, &locs, &[seg(10.0, 20.0, 0)], &VOCAB2, 3).unwrap();
        // Perfect predictions everywhere: mask equals positivity.
        let perfect: Vec<TemporalInterval> =
            (0..32).map(|_| TemporalInterval::new(10.0, 20.0)).collect();
        let mask = confidence_training_mask(&perfect, &t, 0.5);
        assert_eq!(mask, t.is_positive);
        // Disjoint predictions: mask empty.
        let bad: Vec<TemporalInterval> = (0..32).map(|_| TemporalInterval::new(0.0, 2.0)).collect();
        assert!(confidence_training_mask(&bad, &t, 0.5).iter().all(|m| !m));
    }

    #[test]
    fn huge_alpha_window_check() {
        // A segment shorter than alpha*stride keeps its interior positive, so
        // emptiness requires a segment with no strictly-interior grid point.
        let cfg = flat_cfg(32);
        let locs = pyramid_locations(&cfg);
        let t = assign_regression_targets(&cfg, &locs, &[seg(5.25, 5.75, 0)], &VOCAB2, 3).unwrap();
        assert_eq!(t.num_positive(), 0);
    }

    proptest! {
        #[test]
        fn targets_translation_invariant(
            shift in 1u32..1000,
            start8 in 8u32..64,
            len8 in 8u32..80,
        ) {
            // Dyadic coordinates keep the arithmetic exact under integer shifts.
            let cfg = flat_cfg(64);
            let locs = pyramid_locations(&cfg);
            let s = start8 as f64 / 8.0;
            let e = s + len8 as f64 / 8.0;
            let base = LocationTargets::assign(&cfg, &locs, &[seg(s, e, 0)], &VOCAB2, 3).unwrap();

            let shifted_cfg = flat_cfg(64 + shift as usize);
            let shifted_locs = pyramid_locations(&shifted_cfg);
            let shifted = LocationTargets::assign(
                &shifted_cfg,
                &shifted_locs,
                &[seg(s + shift as f64, e + shift as f64, 0)],
                &VOCAB2,
                3,
            ).unwrap();
            for i in 0..locs.len() {
                let j = i + shift as usize;
                prop_assert_eq!(base.is_positive[i], shifted.is_positive[j]);
                prop_assert_eq!(base.r_start[i], shifted.r_start[j]);
                prop_assert_eq!(base.r_end[i], shifted.r_end[j]);
                prop_assert_eq!(base.p_start[i], shifted.p_start[j]);
                prop_assert_eq!(base.p_end[i], shifted.p_end[j]);
            }
        }

        #[test]
        fn confidence_targets_stay_in_unit_interval(
            s in 0.0f64..30.0,
            len in 0.5f64..30.0,
        ) {
            let cfg = PyramidConfig { num_levels: 3, base_length: 64, scale_factor: 2, frame_rate: 1.0 };
            let locs = pyramid_locations(&cfg);
            let (p_s, p_e) = boundary_confidence_targets(&cfg, &locs, &[seg(s, s + len, 0)]);
            for v in p_s.iter().chain(p_e.iter()) {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }

        #[test]
        fn nested_segments_defer_to_inner(inner_off in 1u32..4, inner_len in 2u32..6) {
            let cfg = flat_cfg(40);
            let locs = pyramid_locations(&cfg);
            let outer = seg(5.0, 35.0, 0);
            let s = 5.0 + inner_off as f64 + 10.0;
            let inner = seg(s, s + inner_len as f64, 1);
            let t = assign_regression_targets(&cfg, &locs, &[outer, inner], &VOCAB2, 3).unwrap();
            for (i, loc) in locs.iter().enumerate() {
                if t.is_positive[i] && inner.interval.contains_strict(loc.t) {
                    // Any positive interior location of the inner segment uses it.
                    if (loc.t - inner.interval.center()).abs() <= 1.5
                        || inner.interval.length() < 3.0
                    {
                        prop_assert_eq!(t.assigned[i].unwrap(), inner.interval);
                    }
                }
            }
        }
    }
}
