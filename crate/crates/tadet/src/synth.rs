//! Synthetic sequences with known annotations, for end-to-end pipeline runs.
//!
//! Each class gets an orthonormal template vector, and action boundaries get
//! two further bump vectors orthogonal to every template. Frames inside an
//! action carry the class template at unit strength; triangular bumps mark
//! each start and end; Gaussian noise goes on top. Because the bump
//! directions are orthogonal to the templates, nearest-template
//! classification of in-action frames is exact at zero noise — so any
//! failure to learn is the model's fault, not the data's.

use serde::{Deserialize, Serialize};

use crate::assign::{ActionLabel, ClassVocab, GroundTruthSegment};
use crate::features::{FeatureMap, FeaturePyramid};
use crate::rng::Stream;
use crate::timeline::{PyramidConfig, TemporalInterval};

/// Triangular boundary-bump half-width, in level-0 frames.
pub const BUMP_HALF_WIDTH: f64 = 2.0;
/// Peak strength of the boundary bumps.
pub const BUMP_AMPLITUDE: f64 = 0.75;
/// Minimum gap between placed segments, so adjacent bumps never merge.
const MIN_GAP: f64 = 2.0 * BUMP_HALF_WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_sequences: usize,
    /// Level-0 length of every sequence, in feature frames.
    pub sequence_length: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub num_levels: usize,
    /// Poisson mean of the per-sequence action count.
    pub mean_actions: f64,
    /// Action lengths are log-uniform in `[min_length, max_length]` frames.
    pub min_length: f64,
    pub max_length: f64,
    /// Standard deviation of the additive Gaussian feature noise.
    pub noise: f64,
    pub frame_rate: f64,
    pub seed: u64,
    /// Shifts the per-sequence RNG substreams without touching the class
    /// templates or bump directions, so two datasets with the same seed but
    /// different offsets share a feature vocabulary while containing disjoint
    /// sequences — exactly what a held-out split needs.
    pub sequence_offset: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_sequences: 20,
            sequence_length: 512,
            feature_dim: 16,
            num_classes: 4,
            num_levels: 6,
            mean_actions: 5.0,
            min_length: 16.0,
            max_length: 128.0,
            noise: 0.1,
            frame_rate: 8.0,
            seed: 7,
            sequence_offset: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_sequences == 0 {
            return Err("need at least one sequence".into());
        }
        if self.num_classes == 0 {
            return Err("need at least one class".into());
        }
        // Templates plus the two bump directions must fit orthogonally.
        if self.num_classes + 2 > self.feature_dim {
            return Err(format!(
                "feature_dim {} too small for {} class templates plus 2 bump directions",
                self.feature_dim, self.num_classes
            ));
        }
        if !(self.min_length >= 1.0 && self.max_length >= self.min_length) {
            return Err("need 1 <= min_length <= max_length".into());
        }
        if self.max_length + 2.0 * BUMP_HALF_WIDTH >= self.sequence_length as f64 {
            return Err(format!(
                "max_length {} leaves no room in sequences of {} frames",
                self.max_length, self.sequence_length
            ));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err("noise must be nonnegative".into());
        }
        if !(self.mean_actions >= 0.0 && self.mean_actions.is_finite()) {
            return Err("mean_actions must be nonnegative".into());
        }
        self.pyramid_config().validate()?;
        Ok(())
    }

    pub fn pyramid_config(&self) -> PyramidConfig {
        PyramidConfig {
            num_levels: self.num_levels,
            base_length: self.sequence_length,
            scale_factor: 2,
            frame_rate: self.frame_rate,
        }
    }

    pub fn vocab(&self) -> ClassVocab {
        ClassVocab::Single { num_classes: self.num_classes }
    }
}

/// One generated sequence: pyramid features plus its annotations (in level-0
/// frame units).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub id: String,
    pub features: FeaturePyramid,
    pub segments: Vec<GroundTruthSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    /// Class templates (orthonormal, one row per class) — kept so tests can
    /// verify the separability guarantee.
    pub templates: Vec<Vec<f64>>,
    /// Start/end bump directions, orthonormal to all templates.
    pub start_bump: Vec<f64>,
    pub end_bump: Vec<f64>,
    pub sequences: Vec<SynthSequence>,
}

const TEMPLATE_SUBSTREAM: u64 = 0;
const SEQUENCE_SUBSTREAM_BASE: u64 = 1;
const SYNTH_STREAM_TAG: u64 = 0x73796e; // "syn"

/// Orthonormal basis of `count` vectors in `dim` dimensions via Gram-Schmidt
/// over random normal draws.
fn orthonormal_vectors(dim: usize, count: usize, s: &mut Stream) -> Vec<Vec<f64>> {
    assert!(count <= dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| s.normal()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A degenerate draw (norm ~ 0) is astronomically unlikely; redraw.
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

/// Place `count` non-overlapping segments (with a small guard gap and clear
/// of the sequence edges). Placement retries a bounded number of times, so
/// crowded configs simply come out with fewer actions.
fn place_segments(
    count: usize,
    cfg: &SynthConfig,
    s: &mut Stream,
) -> Vec<TemporalInterval> {
    let seq_len = cfg.sequence_length as f64;
    let mut placed: Vec<TemporalInterval> = Vec::new();
    let mut attempts = 0usize;
    let max_attempts = 20 * count.max(1);
    while placed.len() < count && attempts < max_attempts {
        attempts += 1;
        let len = s.log_uniform(cfg.min_length, cfg.max_length);
        let lo = BUMP_HALF_WIDTH;
        let hi = seq_len - BUMP_HALF_WIDTH - len;
        if hi <= lo {
            continue;
        }
        let start = s.uniform(lo, hi);
        let candidate = TemporalInterval::new(start, start + len);
        let clashes = placed.iter().any(|p| {
            candidate.start < p.end + MIN_GAP && p.start < candidate.end + MIN_GAP
        });
        if !clashes {
            placed.push(candidate);
        }
    }
    placed.sort_by(|a, b| a.start.total_cmp(&b.start));
    placed
}

/// Generate the full dataset for a config. The same config always yields the
/// same dataset, and each sequence draws from its own RNG substream, so the
/// content of sequence `i` does not depend on how many others exist.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset, String> {
    cfg.validate()?;
    let root = Stream::new(cfg.seed, SYNTH_STREAM_TAG);
    let mut tpl_stream = root.substream(TEMPLATE_SUBSTREAM);
    let mut directions =
        orthonormal_vectors(cfg.feature_dim, cfg.num_classes + 2, &mut tpl_stream);
    let end_bump = directions.pop().expect("requested count includes both bumps");
    let start_bump = directions.pop().expect("requested count includes both bumps");
    let templates = directions;

    let mut sequences = Vec::with_capacity(cfg.num_sequences);
    for i in 0..cfg.num_sequences {
        let mut s = root.substream(SEQUENCE_SUBSTREAM_BASE + cfg.sequence_offset + i as u64);
        let count = s.poisson(cfg.mean_actions);
        let intervals = place_segments(count, cfg, &mut s);
        let segments: Vec<GroundTruthSegment> = intervals
            .iter()
            .map(|&interval| GroundTruthSegment {
                interval,
                label: ActionLabel::Single(s.below(cfg.num_classes) as u32),
            })
            .collect();

        let mut level0 = FeatureMap::zeros(cfg.feature_dim, cfg.sequence_length);
        for seg in &segments {
            let class = match seg.label {
                ActionLabel::Single(c) => c as usize,
                ActionLabel::VerbNoun { .. } => unreachable!("synth uses single labels"),
            };
            add_span(&mut level0, &templates[class], &seg.interval);
            add_bump(&mut level0, &start_bump, seg.interval.start);
            add_bump(&mut level0, &end_bump, seg.interval.end);
        }
        if cfg.noise > 0.0 {
            for v in &mut level0.data {
                *v += cfg.noise * s.normal();
            }
        }
        sequences.push(SynthSequence {
            id: format!("seq_{:04}", cfg.sequence_offset + i as u64),
            features: FeaturePyramid::from_level0(level0, cfg.num_levels),
            segments,
        });
    }
    Ok(SynthDataset {
        config: *cfg,
        templates,
        start_bump,
        end_bump,
        sequences,
    })
}

/// Add `template` to every frame strictly inside the interval.
fn add_span(map: &mut FeatureMap, template: &[f64], interval: &TemporalInterval) {
    let from = interval.start.ceil().max(0.0) as usize;
    let to = (interval.end.floor() as usize).min(map.len.saturating_sub(1));
    for (c, &tv) in template.iter().enumerate() {
        if tv == 0.0 {
            continue;
        }
        let row = map.row_mut(c);
        for frame in row.iter_mut().take(to + 1).skip(from) {
            *frame += tv;
        }
    }
}

/// Add a triangular bump of the given direction centered at `center`.
fn add_bump(map: &mut FeatureMap, direction: &[f64], center: f64) {
    let from = ((center - BUMP_HALF_WIDTH).ceil().max(0.0)) as usize;
    let to = ((center + BUMP_HALF_WIDTH).floor() as usize).min(map.len.saturating_sub(1));
    for frame in from..=to {
        let weight = 1.0 - (frame as f64 - center).abs() / BUMP_HALF_WIDTH;
        if weight <= 0.0 {
            continue;
        }
        let scale = BUMP_AMPLITUDE * weight;
        for (c, &dv) in direction.iter().enumerate() {
            map.data[c * map.len + frame] += scale * dv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_sequences: 6,
            sequence_length: 128,
            feature_dim: 8,
            num_classes: 3,
            num_levels: 3,
            mean_actions: 3.0,
            min_length: 8.0,
            max_length: 32.0,
            noise: 0.0,
            frame_rate: 4.0,
            seed: 123,
            sequence_offset: 0,
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        let mut cfg = small_cfg();
        cfg.num_classes = 7; // 7 + 2 > 8 dims
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.max_length = 200.0; // longer than the sequence
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.noise = -0.5;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SynthConfig { seed: 124, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sequences_are_independent_of_dataset_size() {
        let cfg = small_cfg();
        let big = generate_dataset(&cfg).unwrap();
        let small = generate_dataset(&SynthConfig { num_sequences: 2, ..cfg }).unwrap();
        assert_eq!(big.sequences[0], small.sequences[0]);
        assert_eq!(big.sequences[1], small.sequences[1]);
    }

    #[test]
    fn sequence_offset_keeps_templates_but_replaces_sequences() {
        let cfg = small_cfg();
        let train = generate_dataset(&cfg).unwrap();
        let held =
            generate_dataset(&SynthConfig { sequence_offset: 100, ..cfg }).unwrap();
        assert_eq!(train.templates, held.templates);
        assert_eq!(train.start_bump, held.start_bump);
        assert_eq!(train.end_bump, held.end_bump);
        assert_eq!(held.sequences[0].id, "seq_0100");
        assert_ne!(
            train.sequences[0].features.levels[0].data,
            held.sequences[0].features.levels[0].data,
        );
        // An offset dataset is the tail of a larger one with the same seed.
        let big =
            generate_dataset(&SynthConfig { num_sequences: 102, ..cfg }).unwrap();
        assert_eq!(big.sequences[100], held.sequences[0]);
    }

    #[test]
    fn directions_are_orthonormal() {
        let ds = generate_dataset(&small_cfg()).unwrap();
        let mut all: Vec<&Vec<f64>> = ds.templates.iter().collect();
        all.push(&ds.start_bump);
        all.push(&ds.end_bump);
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn segments_fit_with_gaps_and_length_bounds() {
        let cfg = small_cfg();
        let ds = generate_dataset(&cfg).unwrap();
        let mut saw_segments = false;
        for seq in &ds.sequences {
            for seg in &seq.segments {
                saw_segments = true;
                let len = seg.interval.length();
                assert!(len >= cfg.min_length && len <= cfg.max_length);
                assert!(seg.interval.start >= BUMP_HALF_WIDTH);
                assert!(seg.interval.end <= cfg.sequence_length as f64 - BUMP_HALF_WIDTH);
            }
            for w in seq.segments.windows(2) {
                assert!(
                    w[1].interval.start >= w[0].interval.end + MIN_GAP,
                    "segments must keep the guard gap"
                );
            }
        }
        assert!(saw_segments, "mean 3 over 6 sequences should place something");
    }

    #[test]
    fn noiseless_frames_classify_exactly_by_nearest_template() {
        let ds = generate_dataset(&small_cfg()).unwrap();
        let mut checked = 0;
        for seq in &ds.sequences {
            let level0 = &seq.features.levels[0];
            for seg in &seq.segments {
                let want = match seg.label {
                    ActionLabel::Single(c) => c as usize,
                    _ => unreachable!(),
                };
                let from = seg.interval.start.ceil() as usize;
                let to = seg.interval.end.floor() as usize;
                for t in from..=to {
                    let col = level0.column(t);
                    let best = (0..ds.templates.len())
                        .max_by(|&a, &b| {
                            let da: f64 =
                                col.iter().zip(&ds.templates[a]).map(|(x, y)| x * y).sum();
                            let db: f64 =
                                col.iter().zip(&ds.templates[b]).map(|(x, y)| x * y).sum();
                            da.total_cmp(&db)
                        })
                        .unwrap();
                    assert_eq!(best, want, "frame {t} of {} misclassified", seq.id);
                    checked += 1;
                }
            }
        }
        assert!(checked > 50, "expected a healthy number of in-action frames");
    }

    #[test]
    fn boundary_bumps_are_present_and_orthogonal_to_templates() {
        let ds = generate_dataset(&small_cfg()).unwrap();
        for seq in &ds.sequences {
            let level0 = &seq.features.levels[0];
            for seg in &seq.segments {
                // Near the start, the start-bump direction has visible mass.
                let t0 = seg.interval.start.round() as usize;
                let dot: f64 = level0
                    .column(t0)
                    .iter()
                    .zip(&ds.start_bump)
                    .map(|(x, y)| x * y)
                    .sum();
                assert!(
                    dot > 0.25 * BUMP_AMPLITUDE,
                    "start bump missing at frame {t0} of {}",
                    seq.id
                );
            }
        }
    }

    #[test]
    fn pyramid_matches_declared_geometry() {
        let cfg = small_cfg();
        let ds = generate_dataset(&cfg).unwrap();
        let pyr_cfg = cfg.pyramid_config();
        for seq in &ds.sequences {
            assert!(seq.features.check_against(&pyr_cfg).is_ok());
        }
        assert_eq!(ds.sequences.len(), 6);
        assert_eq!(ds.sequences[0].id, "seq_0000");
    }

    #[test]
    fn action_counts_vary_across_sequences() {
        let cfg = SynthConfig { num_sequences: 16, ..small_cfg() };
        let ds = generate_dataset(&cfg).unwrap();
        let counts: Vec<usize> = ds.sequences.iter().map(|s| s.segments.len()).collect();
        let distinct: std::collections::BTreeSet<usize> = counts.iter().copied().collect();
        assert!(distinct.len() > 1, "Poisson counts should not be constant: {counts:?}");
    }
}
