//! Detection metrics: interpolated average precision, mAP over tIoU
//! thresholds, boundary-error distributions, and length-stratified scoring.
//!
//! Matching is greedy per class: detections in descending score order claim
//! the not-yet-matched ground truth with the highest overlap in the same
//! video, provided it reaches the tIoU threshold. AP uses the interpolated
//! precision envelope (precision at each recall level is the maximum
//! precision at that recall or beyond), summed over the recall increments of
//! the true positives and divided by the ground-truth count once at the end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assign::{ActionLabel, GroundTruthSegment};
use crate::decode::Proposal;
use crate::timeline::tiou;

/// The usual evaluation grid.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Ground-truth length bins (units follow the data, typically seconds); a
/// segment of length `L` falls in the bin with `lo < L <= hi`.
pub const LENGTH_GROUPS: [(&str, f64, f64); 5] = [
    ("XS", 0.0, 2.0),
    ("S", 2.0, 4.0),
    ("M", 4.0, 6.0),
    ("L", 6.0, 8.0),
    ("XL", 8.0, f64::INFINITY),
];

/// One video's detections and annotations, in the same time units.
#[derive(Debug, Clone, Default)]
pub struct EvalVideo {
    pub detections: Vec<Proposal>,
    pub ground_truth: Vec<GroundTruthSegment>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Collect boundary-error distributions of matches at
    /// `curve_match_threshold` tIoU.
    pub boundary_curve: bool,
    /// Error-axis sample points of the cumulative curves.
    pub curve_grid: Vec<f64>,
    pub curve_match_threshold: f64,
    pub length_stratified: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            boundary_curve: true,
            curve_grid: (0..=100).map(|i| i as f64 * 0.05).collect(),
            curve_match_threshold: 0.5,
            length_stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassApRow {
    pub label: ActionLabel,
    pub num_gt: usize,
    /// AP at each requested threshold.
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryErrorCurves {
    pub grid: Vec<f64>,
    /// Fraction of matched detections with |start error| <= grid point.
    pub start_cdf: Vec<f64>,
    pub end_cdf: Vec<f64>,
    pub num_matched: usize,
    pub match_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthGroupRow {
    pub name: String,
    pub lo: f64,
    /// Upper bound; the last bin is unbounded (`INFINITY`), which JSON can
    /// only carry as `null`, so this field round-trips through `Option`.
    #[serde(with = "json_upper_bound")]
    pub hi: f64,
    pub num_gt: usize,
    pub map_per_threshold: Vec<f64>,
    pub average_map: f64,
}

/// JSON has no infinity literal; an unbounded bin edge travels as `null`.
mod json_upper_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub map_per_threshold: Vec<f64>,
    pub average_map: f64,
    pub per_class_ap: Vec<ClassApRow>,
    pub num_videos: usize,
    pub num_ground_truth: usize,
    pub num_detections: usize,
    pub boundary_errors: Option<BoundaryErrorCurves>,
    pub length_stratified: Option<Vec<LengthGroupRow>>,
}

/// Per-class pooled detection list: (video index, detection index), sorted
/// by score descending, then earlier start, then input order.
type ClassDets = Vec<(usize, usize)>;
/// Per-class ground-truth list: (video index, gt index).
type ClassGts = Vec<(usize, usize)>;

fn group_by_class(videos: &[EvalVideo]) -> BTreeMap<ActionLabel, (ClassDets, ClassGts)> {
    let mut by_class: BTreeMap<ActionLabel, (ClassDets, ClassGts)> = BTreeMap::new();
    for (vi, video) in videos.iter().enumerate() {
        for (di, det) in video.detections.iter().enumerate() {
            by_class.entry(det.label).or_default().0.push((vi, di));
        }
        for (gi, gt) in video.ground_truth.iter().enumerate() {
            by_class.entry(gt.label).or_default().1.push((vi, gi));
        }
    }
    for (dets, _) in by_class.values_mut() {
        dets.sort_by(|&(va, da), &(vb, db)| {
            let a = &videos[va].detections[da];
            let b = &videos[vb].detections[db];
            b.score
                .total_cmp(&a.score)
                .then(a.interval.start.total_cmp(&b.interval.start))
                .then((va, da).cmp(&(vb, db)))
        });
    }
    by_class
}

/// Greedy matching of one class at one threshold. Returns, per detection in
/// the given (sorted) order, the matched ground truth as an index into
/// `gts`, or None for a false positive.
fn match_class(
    videos: &[EvalVideo],
    dets: &ClassDets,
    gts: &ClassGts,
    threshold: f64,
) -> Vec<Option<usize>> {
    let mut gt_taken = vec![false; gts.len()];
    // Ground truths of this class per video, as indices into `gts`.
    let mut by_video: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, &(vi, _)) in gts.iter().enumerate() {
        by_video.entry(vi).or_default().push(k);
    }
    let mut matches = Vec::with_capacity(dets.len());
    for &(vi, di) in dets {
        let det = &videos[vi].detections[di];
        let mut best: Option<(usize, f64)> = None;
        for &k in by_video.get(&vi).map(Vec::as_slice).unwrap_or(&[]) {
            if gt_taken[k] {
                continue;
            }
            let gt = &videos[gts[k].0].ground_truth[gts[k].1];
            let ov = tiou(&det.interval, &gt.interval);
            if ov < threshold {
                continue;
            }
            // Highest overlap wins; ties go to the earlier-listed gt.
            let better = match best {
                None => true,
                Some((_, bov)) => ov > bov,
            };
            if better {
                best = Some((k, ov));
            }
        }
        if let Some((k, _)) = best {
            gt_taken[k] = true;
            matches.push(Some(k));
        } else {
            matches.push(None);
        }
    }
    matches
}

/// Interpolated AP from ranked true/false-positive flags.
///
/// `precision[k] = tp_cum / (k + 1)`; the envelope takes the running max
/// from the tail; AP is the envelope summed at true-positive ranks, divided
/// by `num_gt` once.
fn ap_from_flags(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (k, &hit) in flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    let mut envelope = precision;
    let mut running = 0.0_f64;
    for p in envelope.iter_mut().rev() {
        running = running.max(*p);
        *p = running;
    }
    let mut sum = 0.0;
    for (k, &hit) in flags.iter().enumerate() {
        if hit {
            sum += envelope[k];
        }
    }
    sum / num_gt as f64
}

fn validate_thresholds(thresholds: &[f64]) -> Result<(), String> {
    if thresholds.is_empty() {
        return Err("need at least one tIoU threshold".into());
    }
    for &t in thresholds {
        if !(t > 0.0 && t <= 1.0) {
            return Err(format!("tIoU threshold {t} outside (0, 1]"));
        }
    }
    Ok(())
}

/// Full evaluation over a set of videos.
pub fn evaluate(
    videos: &[EvalVideo],
    thresholds: &[f64],
    opts: &EvalOptions,
) -> Result<EvalReport, String> {
    validate_thresholds(thresholds)?;
    let by_class = group_by_class(videos);

    let mut per_class_ap = Vec::new();
    for (label, (dets, gts)) in &by_class {
        if gts.is_empty() {
            continue; // classes never annotated do not enter mAP
        }
        let ap = thresholds
            .iter()
            .map(|&thr| {
                let matches = match_class(videos, dets, gts, thr);
                let flags: Vec<bool> = matches.iter().map(Option::is_some).collect();
                ap_from_flags(&flags, gts.len())
            })
            .collect();
        per_class_ap.push(ClassApRow { label: *label, num_gt: gts.len(), ap });
    }

    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|ti| {
            if per_class_ap.is_empty() {
                0.0
            } else {
                per_class_ap.iter().map(|row| row.ap[ti]).sum::<f64>() / per_class_ap.len() as f64
            }
        })
        .collect();
    let average_map = map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64;

    let boundary_errors = if opts.boundary_curve {
        Some(boundary_error_curves(
            videos,
            &by_class,
            &opts.curve_grid,
            opts.curve_match_threshold,
        )?)
    } else {
        None
    };

    let length_stratified = if opts.length_stratified {
        Some(length_stratified_map(videos, &by_class, thresholds))
    } else {
        None
    };

    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        map_per_threshold,
        average_map,
        per_class_ap,
        num_videos: videos.len(),
        num_ground_truth: videos.iter().map(|v| v.ground_truth.len()).sum(),
        num_detections: videos.iter().map(|v| v.detections.len()).sum(),
        boundary_errors,
        length_stratified,
    })
}

fn boundary_error_curves(
    videos: &[EvalVideo],
    by_class: &BTreeMap<ActionLabel, (ClassDets, ClassGts)>,
    grid: &[f64],
    match_threshold: f64,
) -> Result<BoundaryErrorCurves, String> {
    if grid.is_empty() {
        return Err("boundary-error grid must not be empty".into());
    }
    let mut start_errors = Vec::new();
    let mut end_errors = Vec::new();
    for (dets, gts) in by_class.values() {
        if gts.is_empty() {
            continue;
        }
        let matches = match_class(videos, dets, gts, match_threshold);
        for (&(vi, di), m) in dets.iter().zip(&matches) {
            let Some(k) = m else { continue };
            let det = &videos[vi].detections[di].interval;
            let gt = &videos[gts[*k].0].ground_truth[gts[*k].1].interval;
            start_errors.push((det.start - gt.start).abs());
            end_errors.push((det.end - gt.end).abs());
        }
    }
    let n = start_errors.len();
    let cdf = |errors: &[f64]| -> Vec<f64> {
        grid.iter()
            .map(|&x| {
                if n == 0 {
                    0.0
                } else {
                    errors.iter().filter(|&&e| e <= x).count() as f64 / n as f64
                }
            })
            .collect()
    };
    Ok(BoundaryErrorCurves {
        grid: grid.to_vec(),
        start_cdf: cdf(&start_errors),
        end_cdf: cdf(&end_errors),
        num_matched: n,
        match_threshold,
    })
}

fn length_group_of(len: f64) -> usize {
    for (gi, &(_, lo, hi)) in LENGTH_GROUPS.iter().enumerate() {
        if len > lo && len <= hi {
            return gi;
        }
    }
    // Nonpositive lengths land in the shortest bin.
    0
}

/// mAP restricted to ground truths of each length bin. Detections matched to
/// an out-of-bin ground truth are dropped from that bin's ranking (neither
/// true nor false positives); unmatched detections count as false positives
/// in every bin.
fn length_stratified_map(
    videos: &[EvalVideo],
    by_class: &BTreeMap<ActionLabel, (ClassDets, ClassGts)>,
    thresholds: &[f64],
) -> Vec<LengthGroupRow> {
    let gt_group = |gts: &ClassGts, k: usize| -> usize {
        let (vi, gi) = gts[k];
        length_group_of(videos[vi].ground_truth[gi].interval.length())
    };
    let mut rows: Vec<LengthGroupRow> = LENGTH_GROUPS
        .iter()
        .map(|&(name, lo, hi)| LengthGroupRow {
            name: name.to_string(),
            lo,
            hi,
            num_gt: 0,
            map_per_threshold: vec![0.0; thresholds.len()],
            average_map: 0.0,
        })
        .collect();
    // Per group, per threshold: sum of AP over classes with >= 1 gt in group.
    let mut ap_sums = vec![vec![0.0; thresholds.len()]; LENGTH_GROUPS.len()];
    let mut class_counts = vec![0usize; LENGTH_GROUPS.len()];

    for (dets, gts) in by_class.values() {
        if gts.is_empty() {
            continue;
        }
        let mut group_gt_counts = [0usize; 5];
        for k in 0..gts.len() {
            group_gt_counts[gt_group(gts, k)] += 1;
        }
        for (gi, &cnt) in group_gt_counts.iter().enumerate() {
            rows[gi].num_gt += cnt;
            if cnt > 0 {
                class_counts[gi] += 1;
            }
        }
        for (ti, &thr) in thresholds.iter().enumerate() {
            let matches = match_class(videos, dets, gts, thr);
            for (gi, &cnt) in group_gt_counts.iter().enumerate() {
                if cnt == 0 {
                    continue;
                }
                let flags: Vec<bool> = matches
                    .iter()
                    .filter_map(|m| match m {
                        Some(k) if gt_group(gts, *k) == gi => Some(true),
                        Some(_) => None, // matched out of group: ignored
                        None => Some(false),
                    })
                    .collect();
                ap_sums[gi][ti] += ap_from_flags(&flags, cnt);
            }
        }
    }

    for (gi, row) in rows.iter_mut().enumerate() {
        if class_counts[gi] > 0 {
            row.map_per_threshold = ap_sums[gi]
                .iter()
                .map(|s| s / class_counts[gi] as f64)
                .collect();
        }
        row.average_map =
            row.map_per_threshold.iter().sum::<f64>() / thresholds.len() as f64;
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::TemporalInterval;
    use approx::assert_abs_diff_eq;

    fn det(s: f64, e: f64, c: u32, score: f64) -> Proposal {
        Proposal {
            interval: TemporalInterval::new(s, e),
            label: ActionLabel::Single(c),
            score,
        }
    }

    fn gt(s: f64, e: f64, c: u32) -> GroundTruthSegment {
        GroundTruthSegment {
            interval: TemporalInterval::new(s, e),
            label: ActionLabel::Single(c),
        }
    }

    fn quick_opts() -> EvalOptions {
        EvalOptions { boundary_curve: false, length_stratified: false, ..Default::default() }
    }

    #[test]
    fn ap_flag_worked_examples() {
        assert_eq!(ap_from_flags(&[true], 1), 1.0);
        // FP first, then TP: precision [0, 1/2], envelope [1/2, 1/2].
        assert_abs_diff_eq!(ap_from_flags(&[false, true], 1), 0.5, epsilon = 1e-15);
        // TP, FP, TP with two gts: envelope [1, 2/3, 2/3] -> (1 + 2/3) / 2.
        assert_abs_diff_eq!(
            ap_from_flags(&[true, false, true], 2),
            (1.0 + 2.0 / 3.0) / 2.0,
            epsilon = 1e-15
        );
        // Missing gts cap recall: one TP out of two gts.
        assert_abs_diff_eq!(ap_from_flags(&[true], 2), 0.5, epsilon = 1e-15);
        assert_eq!(ap_from_flags(&[], 3), 0.0);
    }

    #[test]
    fn trailing_duplicates_do_not_reduce_interpolated_ap() {
        assert_eq!(ap_from_flags(&[true, false, false], 1), 1.0);
    }

    #[test]
    fn perfect_detection_scores_full_map() {
        let videos = vec![EvalVideo {
            detections: vec![det(1.0, 5.0, 0, 0.9), det(8.0, 12.0, 1, 0.8)],
            ground_truth: vec![gt(1.0, 5.0, 0), gt(8.0, 12.0, 1)],
        }];
        let report = evaluate(&videos, &DEFAULT_THRESHOLDS, &quick_opts()).unwrap();
        assert_eq!(report.average_map, 1.0);
        assert!(report.map_per_threshold.iter().all(|&m| m == 1.0));
        assert_eq!(report.num_ground_truth, 2);
        assert_eq!(report.num_detections, 2);
    }

    #[test]
    fn matching_is_confined_to_the_video() {
        // The only detection sits in video 0; the only gt in video 1.
        let videos = vec![
            EvalVideo { detections: vec![det(0.0, 4.0, 0, 0.9)], ground_truth: vec![] },
            EvalVideo { detections: vec![], ground_truth: vec![gt(0.0, 4.0, 0)] },
        ];
        let report = evaluate(&videos, &[0.5], &quick_opts()).unwrap();
        assert_eq!(report.map_per_threshold[0], 0.0);
    }

    #[test]
    fn greedy_matching_lets_the_higher_score_claim_the_gt() {
        // Both detections overlap the single gt; the higher-scored one is
        // slightly worse localized but still claims it first.
        let videos = vec![EvalVideo {
            detections: vec![det(0.0, 10.0, 0, 0.9), det(1.0, 9.0, 0, 0.5)],
            ground_truth: vec![gt(1.0, 9.0, 0)],
        }];
        let report = evaluate(&videos, &[0.5], &quick_opts()).unwrap();
        // Ranked flags: [TP, FP] -> AP 1.0 (trailing duplicate).
        assert_eq!(report.map_per_threshold[0], 1.0);
        // At a threshold only the tight detection can reach, the loose
        // high-scored one is a leading FP instead.
        let strict = evaluate(&videos, &[0.9], &quick_opts()).unwrap();
        assert_abs_diff_eq!(strict.map_per_threshold[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn classes_without_gt_are_skipped_but_missed_classes_count() {
        let videos = vec![EvalVideo {
            // Class 7 has detections but no annotations anywhere: ignored.
            detections: vec![det(0.0, 4.0, 7, 0.9), det(1.0, 5.0, 0, 0.8)],
            ground_truth: vec![gt(1.0, 5.0, 0), gt(10.0, 14.0, 1)],
        }];
        let report = evaluate(&videos, &[0.5], &quick_opts()).unwrap();
        assert_eq!(report.per_class_ap.len(), 2);
        // Class 0 perfect, class 1 undetected: mAP = (1 + 0) / 2.
        assert_abs_diff_eq!(report.map_per_threshold[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn map_is_monotone_in_threshold_strictness() {
        let videos = vec![EvalVideo {
            detections: vec![
                det(0.0, 9.0, 0, 0.9),   // iou 0.8 vs [1,9] -> wait: [0,9] vs [1,9]: 8/9
                det(20.0, 26.0, 0, 0.8), // iou vs [21,29]: 5/9
                det(40.0, 43.0, 1, 0.7), // iou vs [40,46]: 0.5
            ],
            ground_truth: vec![gt(1.0, 9.0, 0), gt(21.0, 29.0, 0), gt(40.0, 46.0, 1)],
        }];
        let report = evaluate(&videos, &DEFAULT_THRESHOLDS, &quick_opts()).unwrap();
        for w in report.map_per_threshold.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "stricter thresholds cannot raise mAP");
        }
        assert!(report.average_map > 0.0);
    }

    #[test]
    fn boundary_curves_collect_matched_errors() {
        let videos = vec![EvalVideo {
            detections: vec![det(1.2, 5.1, 0, 0.9), det(30.0, 34.0, 0, 0.8)],
            ground_truth: vec![gt(1.0, 5.0, 0), gt(8.0, 12.0, 0)],
        }];
        let opts = EvalOptions {
            boundary_curve: true,
            curve_grid: vec![0.05, 0.15, 0.25],
            curve_match_threshold: 0.5,
            length_stratified: false,
        };
        let report = evaluate(&videos, &[0.5], &opts).unwrap();
        let curves = report.boundary_errors.unwrap();
        // Only the first detection matches; its errors are 0.2 and 0.1.
        assert_eq!(curves.num_matched, 1);
        assert_eq!(curves.start_cdf, vec![0.0, 0.0, 1.0]);
        assert_eq!(curves.end_cdf, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn length_groups_ignore_out_of_group_matches() {
        let videos = vec![EvalVideo {
            detections: vec![
                det(0.0, 1.5, 0, 0.9),   // matches the XS gt
                det(10.0, 19.0, 0, 0.8), // matches the XL gt
                det(50.0, 51.0, 0, 0.7), // unmatched: FP everywhere
            ],
            ground_truth: vec![gt(0.0, 1.5, 0), gt(10.0, 19.0, 0)],
        }];
        let opts = EvalOptions { boundary_curve: false, ..Default::default() };
        let report = evaluate(&videos, &[0.5], &opts).unwrap();
        let rows = report.length_stratified.unwrap();
        let xs = rows.iter().find(|r| r.name == "XS").unwrap();
        let xl = rows.iter().find(|r| r.name == "XL").unwrap();
        assert_eq!(xs.num_gt, 1);
        assert_eq!(xl.num_gt, 1);
        // XS ranking: [TP (xs det), FP (stray)] -> AP 1.0; the XL-matched
        // detection is ignored there rather than counted against it.
        assert_eq!(xs.map_per_threshold[0], 1.0);
        assert_eq!(xl.map_per_threshold[0], 1.0);
        let m = rows.iter().find(|r| r.name == "M").unwrap();
        assert_eq!(m.num_gt, 0);
        assert_eq!(m.average_map, 0.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let videos = vec![EvalVideo {
            detections: vec![
                det(0.0, 4.0, 0, 0.5),
                det(0.0, 4.0, 1, 0.5),
                det(2.0, 6.0, 0, 0.5),
            ],
            ground_truth: vec![gt(0.0, 4.0, 0), gt(2.0, 6.0, 1)],
        }];
        let a = evaluate(&videos, &DEFAULT_THRESHOLDS, &EvalOptions::default()).unwrap();
        let b = evaluate(&videos, &DEFAULT_THRESHOLDS, &EvalOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let videos = vec![EvalVideo::default()];
        assert!(evaluate(&videos, &[], &quick_opts()).is_err());
        assert!(evaluate(&videos, &[0.0], &quick_opts()).is_err());
        assert!(evaluate(&videos, &[1.5], &quick_opts()).is_err());
    }

    #[test]
    fn report_with_unbounded_length_bin_roundtrips_through_json() {
        let videos = vec![EvalVideo {
            detections: vec![det(0.0, 12.0, 0, 0.9)],
            ground_truth: vec![gt(0.0, 12.0, 0)],
        }];
        let report = evaluate(&videos, &DEFAULT_THRESHOLDS, &EvalOptions::default()).unwrap();
        let rows = report.length_stratified.as_ref().unwrap();
        assert!(rows.iter().any(|r| r.hi == f64::INFINITY));
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"hi\":null"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
