//! Inference: head outputs to scored detections.
//!
//! Per location and class the decoder builds a candidate interval from the
//! regressed offsets, looks up boundary confidences at the predicted start
//! and end (nearest location on the candidate's own pyramid level), and
//! fuses action score and boundary confidences into one ranking score. A
//! class-aware Soft-NMS pass then decays overlapping same-class candidates
//! instead of dropping them outright.

use serde::{Deserialize, Serialize};

use crate::assign::{ActionLabel, ClassVocab};
use crate::heads::HeadOutputs;
use crate::losses::sigmoid;
use crate::timeline::{tiou, PyramidConfig, TemporalInterval};

/// How the action score `p_a` and boundary confidences `p_s`, `p_e` combine
/// into the ranking score. `ClsSqrtSe` (`p_a * sqrt(p_s * p_e)`) is the
/// intended mode; the others are comparison points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `p_a * sqrt(p_s * p_e)` (the default).
    ClsSqrtSe,
    /// `p_s * p_e`: boundary confidences alone.
    BoundaryOnly,
    /// `p_a` alone.
    ClsOnly,
    /// `p_a * p_s`.
    ClsS,
    /// `p_a * p_e`.
    ClsE,
    /// `(p_a + p_s + p_e) / 3`.
    Mean3,
    /// `p_a * p_s * p_e`.
    Product3,
}

impl FusionMode {
    pub const ALL: [FusionMode; 7] = [
        FusionMode::ClsSqrtSe,
        FusionMode::BoundaryOnly,
        FusionMode::ClsOnly,
        FusionMode::ClsS,
        FusionMode::ClsE,
        FusionMode::Mean3,
        FusionMode::Product3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::ClsSqrtSe => "cls_sqrt_se",
            FusionMode::BoundaryOnly => "boundary_only",
            FusionMode::ClsOnly => "cls_only",
            FusionMode::ClsS => "cls_s",
            FusionMode::ClsE => "cls_e",
            FusionMode::Mean3 => "mean3",
            FusionMode::Product3 => "product3",
        }
    }
}

impl Default for FusionMode {
    fn default() -> Self {
        FusionMode::ClsSqrtSe
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionMode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown fusion mode '{s}' (expected one of: {})", {
                FusionMode::ALL.map(|m| m.name()).join(", ")
            }))
    }
}

/// Fused ranking score; all inputs are expected in `[0, 1]`.
pub fn fuse_scores(p_a: f64, p_s: f64, p_e: f64, mode: FusionMode) -> f64 {
    match mode {
        FusionMode::ClsSqrtSe => p_a * (p_s * p_e).sqrt(),
        FusionMode::BoundaryOnly => p_s * p_e,
        FusionMode::ClsOnly => p_a,
        FusionMode::ClsS => p_a * p_s,
        FusionMode::ClsE => p_a * p_e,
        FusionMode::Mean3 => (p_a + p_s + p_e) / 3.0,
        FusionMode::Product3 => p_a * p_s * p_e,
    }
}

/// One scored candidate or detection. Units of `interval` are level-0 frames
/// inside the decoder and seconds once [`decode_sequence`] returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub interval: TemporalInterval,
    pub label: ActionLabel,
    pub score: f64,
}

/// Decoding hyperparameters; the defaults follow the evaluation protocol
/// (candidate floor and cap, Gaussian Soft-NMS, verb/noun shortlists).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub fusion: FusionMode,
    /// Candidates whose action score is at or below this are never built.
    pub pre_score_floor: f64,
    /// Cap on candidates entering Soft-NMS, by fused score.
    pub pre_top_k: usize,
    /// Gaussian decay width: overlap decays scores by `exp(-tiou^2 / this)`.
    pub nms_decay_sigma: f64,
    /// Detections decayed to or below this score are dropped.
    pub nms_score_floor: f64,
    pub max_detections: usize,
    /// Verb/noun shortlist sizes for the multi-task vocabulary.
    pub top_verbs: usize,
    pub top_nouns: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMode::ClsSqrtSe,
            pre_score_floor: 1e-3,
            pre_top_k: 2000,
            nms_decay_sigma: 0.5,
            nms_score_floor: 1e-3,
            max_detections: 200,
            top_verbs: 10,
            top_nouns: 30,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.nms_decay_sigma.is_finite() && self.nms_decay_sigma > 0.0) {
            return Err(format!("nms_decay_sigma must be positive, got {}", self.nms_decay_sigma));
        }
        if self.pre_top_k == 0 || self.max_detections == 0 {
            return Err("pre_top_k and max_detections must be positive".into());
        }
        if self.top_verbs == 0 || self.top_nouns == 0 {
            return Err("verb/noun shortlist sizes must be positive".into());
        }
        Ok(())
    }
}

/// Confidence at the location nearest to `time` on `level`, reading the
/// start-side (`start = true`) or end-side plane. The index is clamped to
/// the level, so out-of-range boundary predictions use the edge location.
pub fn lookup_confidence(
    outputs: &HeadOutputs,
    pyr_cfg: &PyramidConfig,
    level: usize,
    time: f64,
    start: bool,
) -> f64 {
    let len = outputs.level_lens[level];
    debug_assert!(len > 0);
    let idx = (time / pyr_cfg.stride(level)).round().clamp(0.0, (len - 1) as f64) as usize;
    let flat = outputs.level_range(level).start + idx;
    if start {
        outputs.conf_start[flat]
    } else {
        outputs.conf_end[flat]
    }
}

/// Indices of the `k` largest values, by value descending then index
/// ascending.
fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Verb/noun candidate actions for one location: the top verbs crossed with
/// the top nouns, each pair scored `sigmoid(verb logit) * sigmoid(noun
/// logit)`.
pub fn combine_multitask(
    verb_logits: &[f64],
    noun_logits: &[f64],
    top_verbs: usize,
    top_nouns: usize,
) -> Vec<(ActionLabel, f64)> {
    let vs = top_k_indices(verb_logits, top_verbs);
    let ns = top_k_indices(noun_logits, top_nouns);
    let mut out = Vec::with_capacity(vs.len() * ns.len());
    for &v in &vs {
        let pv = sigmoid(verb_logits[v]);
        for &n in &ns {
            let pn = sigmoid(noun_logits[n]);
            out.push((ActionLabel::VerbNoun { verb: v as u32, noun: n as u32 }, pv * pn));
        }
    }
    out
}

/// Class-aware Soft-NMS with Gaussian decay.
///
/// Repeatedly keeps the highest-scoring live candidate (ties: earlier start,
/// then earlier end, then input order) and decays every live candidate of
/// the same class by `exp(-tiou^2 / decay_sigma)`. Stops at `max_keep`
/// detections or when the best remaining score is at or below
/// `score_floor`. Kept proposals carry their decayed scores and come out in
/// descending score order.
pub fn soft_nms(
    candidates: &[Proposal],
    decay_sigma: f64,
    score_floor: f64,
    max_keep: usize,
) -> Vec<Proposal> {
    assert!(decay_sigma > 0.0, "decay_sigma must be positive, got {decay_sigma}");
    let mut score: Vec<f64> = candidates.iter().map(|p| p.score).collect();
    let mut alive = vec![true; candidates.len()];
    let mut kept = Vec::new();
    while kept.len() < max_keep {
        let mut best: Option<usize> = None;
        for i in 0..candidates.len() {
            if !alive[i] {
                continue;
            }
            let better = match best {
                None => true,
                Some(j) => {
                    score[i]
                        .total_cmp(&score[j])
                        .then(candidates[j].interval.start.total_cmp(&candidates[i].interval.start))
                        .then(candidates[j].interval.end.total_cmp(&candidates[i].interval.end))
                        == std::cmp::Ordering::Greater
                }
            };
            if better {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        if score[b] <= score_floor {
            break;
        }
        alive[b] = false;
        kept.push(Proposal { score: score[b], ..candidates[b] });
        for i in 0..candidates.len() {
            if alive[i] && candidates[i].label == candidates[b].label {
                let ov = tiou(&candidates[i].interval, &candidates[b].interval);
                score[i] *= (-(ov * ov) / decay_sigma).exp();
            }
        }
    }
    kept
}

/// Full decode of one sequence: candidates from every location, confidence
/// fusion, candidate cap, Soft-NMS, and conversion to seconds.
///
/// Returned proposals are in seconds, descending by score.
pub fn decode_sequence(
    pyr_cfg: &PyramidConfig,
    outputs: &HeadOutputs,
    vocab: &ClassVocab,
    dcfg: &DecodeConfig,
) -> Vec<Proposal> {
    dcfg.validate().expect("invalid decode config");
    assert_eq!(vocab.width(), outputs.class_width, "vocabulary does not match outputs");
    let seq_len = pyr_cfg.base_length as f64;
    let width = outputs.class_width;
    let mut candidates: Vec<Proposal> = Vec::new();
    let mut flat = 0usize;
    for level in 0..outputs.level_lens.len() {
        let stride = pyr_cfg.stride(level);
        for idx in 0..outputs.level_lens[level] {
            let i = flat + idx;
            let t = idx as f64 * stride;
            let interval = crate::heads::decode_boundaries(
                t,
                outputs.offset_start[i],
                outputs.offset_end[i],
                seq_len,
            );
            let p_s = lookup_confidence(outputs, pyr_cfg, level, interval.start, true);
            let p_e = lookup_confidence(outputs, pyr_cfg, level, interval.end, false);
            let logits = &outputs.logits[i * width..(i + 1) * width];
            let mut push = |label: ActionLabel, p_a: f64| {
                if p_a > dcfg.pre_score_floor {
                    let score = fuse_scores(p_a, p_s, p_e, dcfg.fusion);
                    candidates.push(Proposal { interval, label, score });
                }
            };
            match vocab {
                ClassVocab::Single { num_classes } => {
                    for c in 0..*num_classes {
                        push(ActionLabel::Single(c as u32), sigmoid(logits[c]));
                    }
                }
                ClassVocab::VerbNoun { num_verbs, .. } => {
                    let (vl, nl) = logits.split_at(*num_verbs);
                    for (label, p_a) in
                        combine_multitask(vl, nl, dcfg.top_verbs, dcfg.top_nouns)
                    {
                        push(label, p_a);
                    }
                }
            }
        }
        flat += outputs.level_lens[level];
    }

    // Keep the strongest candidates by fused score; ties resolve by earlier
    // start, then earlier end, then generation order (sort is stable).
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.interval.start.total_cmp(&b.interval.start))
            .then(a.interval.end.total_cmp(&b.interval.end))
    });
    candidates.truncate(dcfg.pre_top_k);

    let kept = soft_nms(&candidates, dcfg.nms_decay_sigma, dcfg.nms_score_floor, dcfg.max_detections);
    let scale = 1.0 / pyr_cfg.frame_rate;
    kept.into_iter()
        .map(|p| Proposal { interval: p.interval.scaled(scale), ..p })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::rng::Stream;

    fn prop(s: f64, e: f64, c: u32, score: f64) -> Proposal {
        Proposal {
            interval: TemporalInterval::new(s, e),
            label: ActionLabel::Single(c),
            score,
        }
    }

    #[test]
    fn fusion_worked_example() {
        // 0.8 * sqrt(0.9 * 0.64)
        let got = fuse_scores(0.8, 0.9, 0.64, FusionMode::ClsSqrtSe);
        assert_abs_diff_eq!(got, 0.8 * 0.576_f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.6071573107523087, epsilon = 1e-12);
    }

    #[test]
    fn fusion_modes_match_formulas() {
        let (a, s, e) = (0.7, 0.9, 0.5);
        assert_eq!(fuse_scores(a, s, e, FusionMode::BoundaryOnly), s * e);
        assert_eq!(fuse_scores(a, s, e, FusionMode::ClsOnly), a);
        assert_eq!(fuse_scores(a, s, e, FusionMode::ClsS), a * s);
        assert_eq!(fuse_scores(a, s, e, FusionMode::ClsE), a * e);
        assert_eq!(fuse_scores(a, s, e, FusionMode::Mean3), (a + s + e) / 3.0);
        assert_eq!(fuse_scores(a, s, e, FusionMode::Product3), a * s * e);
        assert_eq!(fuse_scores(a, s, e, FusionMode::ClsSqrtSe), a * (s * e).sqrt());
    }

    #[test]
    fn fusion_names_roundtrip() {
        for mode in FusionMode::ALL {
            assert_eq!(mode.name().parse::<FusionMode>().unwrap(), mode);
        }
        assert!("nonsense".parse::<FusionMode>().is_err());
        assert_eq!(FusionMode::default(), FusionMode::ClsSqrtSe);
    }

    #[test]
    fn product_modes_never_exceed_cls_only() {
        let mut s = Stream::new(9, 0);
        for _ in 0..500 {
            let a = s.next_f64();
            let ps = s.next_f64();
            let pe = s.next_f64();
            let cls = fuse_scores(a, ps, pe, FusionMode::ClsOnly);
            for m in [FusionMode::ClsSqrtSe, FusionMode::ClsS, FusionMode::ClsE, FusionMode::Product3] {
                assert!(fuse_scores(a, ps, pe, m) <= cls + 1e-15);
            }
        }
    }

    fn outputs_with_conf(level_lens: &[usize]) -> HeadOutputs {
        let n: usize = level_lens.iter().sum();
        let mut o = HeadOutputs {
            num_locations: n,
            class_width: 1,
            level_lens: level_lens.to_vec(),
            offset_start: vec![0.0; n],
            offset_end: vec![0.0; n],
            token_start: vec![0.0; n],
            token_end: vec![0.0; n],
            conf_start: vec![0.0; n],
            conf_end: vec![0.0; n],
            logits: vec![0.0; n],
        };
        for i in 0..n {
            o.conf_start[i] = i as f64;
            o.conf_end[i] = 100.0 + i as f64;
        }
        o
    }

    #[test]
    fn confidence_lookup_uses_nearest_index_on_origin_level() {
        let cfg = PyramidConfig { num_levels: 2, base_length: 8, scale_factor: 2, frame_rate: 1.0 };
        let o = outputs_with_conf(&[8, 4]);
        // Level 0, stride 1: time 2.4 -> index 2.
        assert_eq!(lookup_confidence(&o, &cfg, 0, 2.4, true), 2.0);
        // Level 1, stride 2: time 5.4 -> index 3 -> flat 8 + 3 = 11.
        assert_eq!(lookup_confidence(&o, &cfg, 1, 5.4, true), 11.0);
        assert_eq!(lookup_confidence(&o, &cfg, 1, 5.4, false), 111.0);
        // Clamped on both sides.
        assert_eq!(lookup_confidence(&o, &cfg, 0, -3.0, true), 0.0);
        assert_eq!(lookup_confidence(&o, &cfg, 0, 1e9, true), 7.0);
    }

    #[test]
    fn soft_nms_decays_same_class_only() {
        let a = prop(0.0, 10.0, 0, 0.9);
        let b = prop(1.0, 11.0, 0, 0.8); // heavy overlap with a, same class
        let c = prop(0.0, 10.0, 1, 0.7); // full overlap, different class
        let kept = soft_nms(&[a, b, c], 0.5, 1e-3, 10);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].score, 0.9);
        // c is untouched despite full overlap (different class), so after b
        // decays it moves up to second place.
        assert_eq!(kept[1].score, 0.7);
        assert_eq!(kept[1].label, ActionLabel::Single(1));
        // b decayed once by its overlap with a.
        let ov = tiou(&a.interval, &b.interval);
        assert_abs_diff_eq!(kept[2].score, 0.8 * (-(ov * ov) / 0.5).exp(), epsilon = 1e-15);
    }

    #[test]
    fn soft_nms_respects_floor_and_cap() {
        let near_dupes: Vec<Proposal> =
            (0..6).map(|i| prop(0.0, 10.0, 0, 0.9 - 0.01 * i as f64)).collect();
        // Identical intervals decay by exp(-1/0.5) ~ 0.135 per kept one.
        let kept = soft_nms(&near_dupes, 0.5, 0.05, 10);
        assert!(kept.len() < 6, "floor should stop the cascade, kept {}", kept.len());
        for w in kept.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        let capped = soft_nms(&near_dupes, 0.5, 0.0, 2);
        assert_eq!(capped.len(), 2);
    }

    #[test]
    fn soft_nms_tie_break_prefers_earlier_start() {
        let a = prop(5.0, 9.0, 0, 0.5);
        let b = prop(1.0, 4.0, 0, 0.5);
        let kept = soft_nms(&[a, b], 0.5, 1e-6, 10);
        assert_eq!(kept[0].interval.start, 1.0);
        assert_eq!(kept[1].interval.start, 5.0);
    }

    /// Independent quadratic reference with the same documented tie rules.
    fn soft_nms_reference(
        candidates: &[Proposal],
        decay_sigma: f64,
        floor: f64,
        max_keep: usize,
    ) -> Vec<Proposal> {
        let mut live: Vec<(usize, Proposal)> =
            candidates.iter().copied().enumerate().collect();
        let mut out = Vec::new();
        while out.len() < max_keep && !live.is_empty() {
            let mut bi = 0;
            for i in 1..live.len() {
                let (pa, pb) = (&live[i].1, &live[bi].1);
                let ord = pa
                    .score
                    .total_cmp(&pb.score)
                    .then(pb.interval.start.total_cmp(&pa.interval.start))
                    .then(pb.interval.end.total_cmp(&pa.interval.end))
                    .then(live[bi].0.cmp(&live[i].0));
                if ord == std::cmp::Ordering::Greater {
                    bi = i;
                }
            }
            let best = live.remove(bi).1;
            if best.score <= floor {
                break;
            }
            for (_, p) in live.iter_mut() {
                if p.label == best.label {
                    let ov = tiou(&p.interval, &best.interval);
                    p.score *= (-(ov * ov) / decay_sigma).exp();
                }
            }
            out.push(best);
        }
        out
    }

    #[test]
    fn soft_nms_matches_reference_on_random_sets() {
        let mut s = Stream::new(77, 0);
        for _case in 0..60 {
            let n = 1 + s.below(24);
            let cands: Vec<Proposal> = (0..n)
                .map(|_| {
                    let st = s.uniform(0.0, 50.0);
                    prop(st, st + s.uniform(0.5, 20.0), s.below(3) as u32, s.next_f64())
                })
                .collect();
            let got = soft_nms(&cands, 0.5, 1e-3, 10);
            let want = soft_nms_reference(&cands, 0.5, 1e-3, 10);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.interval, w.interval);
                assert_eq!(g.label, w.label);
                assert_eq!(g.score, w.score, "scores must match bit for bit");
            }
        }
    }

    #[test]
    fn multitask_pairs_cross_top_lists() {
        let verbs = [2.0, 0.0, -1.0];
        let nouns = [1.0, 0.0];
        let pairs = combine_multitask(&verbs, &nouns, 2, 1);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].0, ActionLabel::VerbNoun { verb: 0, noun: 0 });
        assert_abs_diff_eq!(pairs[0].1, sigmoid(2.0) * sigmoid(1.0), epsilon = 1e-15);
        assert_eq!(pairs[1].0, ActionLabel::VerbNoun { verb: 1, noun: 0 });
        assert_abs_diff_eq!(pairs[1].1, sigmoid(0.0) * sigmoid(1.0), epsilon = 1e-15);
    }

    #[test]
    fn decode_sequence_end_to_end_hand_example() {
        let cfg = PyramidConfig { num_levels: 1, base_length: 8, scale_factor: 2, frame_rate: 2.0 };
        let n = 8;
        let mut o = HeadOutputs {
            num_locations: n,
            class_width: 2,
            level_lens: vec![n],
            offset_start: vec![0.0; n],
            offset_end: vec![0.0; n],
            token_start: vec![0.0; n],
            token_end: vec![0.0; n],
            conf_start: vec![0.5; n],
            conf_end: vec![0.5; n],
            logits: vec![-30.0; n * 2],
        };
        // One confident class-0 action at t = 3 spanning [1.5, 5.5].
        o.offset_start[3] = 1.5;
        o.offset_end[3] = 2.5;
        o.logits[3 * 2] = 2.0;
        // Boundary confidences nearest to the predicted edges: index 2 for
        // the start (1.5 rounds up), index 6 for the end.
        o.conf_start[2] = 0.9;
        o.conf_end[6] = 0.8;
        let vocab = ClassVocab::Single { num_classes: 2 };
        let dets = decode_sequence(&cfg, &o, &vocab, &DecodeConfig::default());
        assert_eq!(dets.len(), 1, "only one candidate passes the score floor");
        let d = dets[0];
        assert_eq!(d.label, ActionLabel::Single(0));
        // Seconds: frame interval [1.5, 5.5] at 2 fps.
        assert_abs_diff_eq!(d.interval.start, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(d.interval.end, 2.75, epsilon = 1e-12);
        assert_abs_diff_eq!(d.score, sigmoid(2.0) * (0.9_f64 * 0.8).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn decode_sequence_prefilters_weak_candidates() {
        let cfg = PyramidConfig { num_levels: 1, base_length: 4, scale_factor: 2, frame_rate: 1.0 };
        let o = HeadOutputs {
            num_locations: 4,
            class_width: 1,
            level_lens: vec![4],
            offset_start: vec![1.0; 4],
            offset_end: vec![1.0; 4],
            token_start: vec![0.0; 4],
            token_end: vec![0.0; 4],
            conf_start: vec![1.0; 4],
            conf_end: vec![1.0; 4],
            logits: vec![-10.0; 4], // sigmoid ~ 4.5e-5, below the floor
        };
        let vocab = ClassVocab::Single { num_classes: 1 };
        assert!(decode_sequence(&cfg, &o, &vocab, &DecodeConfig::default()).is_empty());
    }

    #[test]
    fn decode_clamps_intervals_to_sequence() {
        let cfg = PyramidConfig { num_levels: 1, base_length: 6, scale_factor: 2, frame_rate: 1.0 };
        let n = 6;
        let mut o = HeadOutputs {
            num_locations: n,
            class_width: 1,
            level_lens: vec![n],
            offset_start: vec![0.0; n],
            offset_end: vec![0.0; n],
            token_start: vec![0.0; n],
            token_end: vec![0.0; n],
            conf_start: vec![1.0; n],
            conf_end: vec![1.0; n],
            logits: vec![0.0; n],
        };
        o.offset_start[1] = 100.0;
        o.offset_end[1] = 100.0;
        o.logits[1] = 5.0;
        let vocab = ClassVocab::Single { num_classes: 1 };
        let dets = decode_sequence(&cfg, &o, &vocab, &DecodeConfig::default());
        let top = dets[0];
        assert_eq!(top.interval, TemporalInterval::new(0.0, 6.0));
    }
}
