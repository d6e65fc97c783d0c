//! Interval arithmetic and feature-pyramid geometry.
//!
//! Every other module works in terms of [`TemporalInterval`] (boundary math),
//! [`PyramidConfig`] (multi-resolution sequence layout) and [`PyramidLocation`]
//! (the per-timestep prediction sites). Positions are kept on the level-0
//! feature-frame grid; conversion to seconds happens only at I/O and
//! evaluation boundaries.

use serde::{Deserialize, Serialize};

/// A closed interval `[start, end]` on the time axis.
///
/// Units are whatever the caller is working in (seconds or feature frames);
/// the arithmetic is unit-free. Zero-length intervals are legal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalInterval {
    pub start: f64,
    pub end: f64,
}

impl TemporalInterval {
    /// Build an interval, requiring `end >= start` and finite endpoints.
    pub fn new(start: f64, end: f64) -> Self {
        debug_assert!(start.is_finite() && end.is_finite());
        debug_assert!(end >= start, "interval end {end} < start {start}");
        Self { start, end }
    }

    /// Checked constructor for data arriving from files.
    pub fn try_new(start: f64, end: f64) -> Result<Self, String> {
        if !start.is_finite() || !end.is_finite() {
            return Err(format!("non-finite interval endpoints ({start}, {end})"));
        }
        if end < start {
            return Err(format!("interval end {end} precedes start {start}"));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Strictly-inside test, used by center sampling.
    pub fn contains_strict(&self, t: f64) -> bool {
        self.start < t && t < self.end
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Length of the overlap with `other` (0 when disjoint).
    pub fn intersection_length(&self, other: &TemporalInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// Scale both endpoints, e.g. frames -> seconds with `1.0 / frame_rate`.
    pub fn scaled(&self, factor: f64) -> TemporalInterval {
        TemporalInterval { start: self.start * factor, end: self.end * factor }
    }
}

/// Temporal intersection-over-union of two intervals, in `[0, 1]`.
///
/// Degenerate unions (both intervals zero-length and coincident) yield 0.
pub fn tiou(a: &TemporalInterval, b: &TemporalInterval) -> f64 {
    let inter = a.intersection_length(b);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// One-dimensional generalized IoU, in `[-1, 1]`.
///
/// `tiou(a, b)` minus the fraction of the smallest enclosing interval not
/// covered by the union. Disjoint intervals score negative, approaching -1 as
/// the gap dominates the enclosure.
pub fn giou_1d(a: &TemporalInterval, b: &TemporalInterval) -> f64 {
    let inter = a.intersection_length(b);
    let union = a.length() + b.length() - inter;
    let hull = a.end.max(b.end) - a.start.min(b.start);
    if hull <= 0.0 {
        // Both intervals are the same point.
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (hull - union) / hull
}

/// Layout of the multi-resolution feature pyramid.
///
/// Level `l` holds `ceil(base_length / scale_factor^l)` locations at stride
/// `scale_factor^l` in level-0 frame units. `frame_rate` maps level-0 frames
/// to seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    pub num_levels: usize,
    pub base_length: usize,
    pub scale_factor: usize,
    pub frame_rate: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self { num_levels: 6, base_length: 2304, scale_factor: 2, frame_rate: 30.0 }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_levels == 0 {
            return Err("pyramid needs at least one level".into());
        }
        if self.base_length == 0 {
            return Err("pyramid base_length must be positive".into());
        }
        if self.scale_factor == 0 {
            return Err("pyramid scale_factor must be positive".into());
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        Ok(())
    }

    /// Stride of level `l` in level-0 frame units.
    pub fn stride(&self, level: usize) -> f64 {
        (self.scale_factor as f64).powi(level as i32)
    }

    /// Number of locations at level `l` (ceiling division, no location dropped).
    pub fn level_len(&self, level: usize) -> usize {
        let mut len = self.base_length;
        for _ in 0..level {
            len = len.div_ceil(self.scale_factor);
        }
        len
    }

    /// Total location count across all levels.
    pub fn total_locations(&self) -> usize {
        (0..self.num_levels).map(|l| self.level_len(l)).sum()
    }

    /// A config identical to `self` but with a different level-0 length,
    /// for sequences shorter than the configured default.
    pub fn with_base_length(&self, base_length: usize) -> PyramidConfig {
        PyramidConfig { base_length, ..*self }
    }
}

/// One prediction site: timestep `index` at pyramid level `level`.
///
/// `t` is the position on the level-0 grid: `index * stride`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidLocation {
    pub level: usize,
    pub index: usize,
    pub t: f64,
}

impl PyramidLocation {
    pub fn new(cfg: &PyramidConfig, level: usize, index: usize) -> Self {
        let stride = cfg.stride(level);
        Self { level, index, t: index as f64 * stride }
    }

    pub fn stride(&self, cfg: &PyramidConfig) -> f64 {
        cfg.stride(self.level)
    }
}

/// All locations of the pyramid, level-major then index-major.
pub fn pyramid_locations(cfg: &PyramidConfig) -> Vec<PyramidLocation> {
    let mut out = Vec::with_capacity(cfg.total_locations());
    for level in 0..cfg.num_levels {
        for index in 0..cfg.level_len(level) {
            out.push(PyramidLocation::new(cfg, level, index));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn iv(s: f64, e: f64) -> TemporalInterval {
        TemporalInterval::new(s, e)
    }

    #[test]
    fn tiou_worked_examples() {
        assert_abs_diff_eq!(tiou(&iv(0.0, 10.0), &iv(0.0, 10.0)), 1.0);
        assert_abs_diff_eq!(tiou(&iv(0.0, 10.0), &iv(5.0, 15.0)), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tiou(&iv(0.0, 2.0), &iv(4.0, 6.0)), 0.0);
    }

    #[test]
    fn tiou_degenerate_inputs() {
        // Zero-length intervals are legal and score 0.
        assert_eq!(tiou(&iv(3.0, 3.0), &iv(3.0, 3.0)), 0.0);
        assert_eq!(tiou(&iv(3.0, 3.0), &iv(0.0, 10.0)), 0.0);
    }

    #[test]
    fn giou_worked_examples() {
        assert_abs_diff_eq!(giou_1d(&iv(0.0, 10.0), &iv(0.0, 10.0)), 1.0);
        assert_abs_diff_eq!(giou_1d(&iv(0.0, 2.0), &iv(4.0, 6.0)), -1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(giou_1d(&iv(0.0, 4.0), &iv(2.0, 6.0)), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn giou_point_pair_is_zero() {
        assert_eq!(giou_1d(&iv(5.0, 5.0), &iv(5.0, 5.0)), 0.0);
    }

    #[test]
    fn default_pyramid_location_count() {
        let cfg = PyramidConfig::default();
        assert_eq!(cfg.level_len(0), 2304);
        assert_eq!(cfg.level_len(5), 72);
        assert_eq!(cfg.total_locations(), 4536);
        assert_eq!(pyramid_locations(&cfg).len(), 4536);
    }

    #[test]
    fn location_grid_positions() {
        let cfg = PyramidConfig::default();
        assert_eq!(PyramidLocation::new(&cfg, 0, 5).t, 5.0);
        assert_eq!(PyramidLocation::new(&cfg, 2, 3).t, 12.0);
    }

    #[test]
    fn odd_lengths_use_ceiling_division() {
        let cfg = PyramidConfig { num_levels: 4, base_length: 9, scale_factor: 2, frame_rate: 1.0 };
        assert_eq!(cfg.level_len(0), 9);
        assert_eq!(cfg.level_len(1), 5);
        assert_eq!(cfg.level_len(2), 3);
        assert_eq!(cfg.level_len(3), 2);
    }

    fn interval_strategy() -> impl Strategy<Value = TemporalInterval> {
        (0.0f64..100.0, 0.0f64..50.0).prop_map(|(s, len)| iv(s, s + len))
    }

    proptest! {
        #[test]
        fn tiou_symmetric_and_bounded(a in interval_strategy(), b in interval_strategy()) {
            let ab = tiou(&a, &b);
            let ba = tiou(&b, &a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn giou_below_tiou_and_bounded(a in interval_strategy(), b in interval_strategy()) {
            let g = giou_1d(&a, &b);
            prop_assert_eq!(g, giou_1d(&b, &a));
            prop_assert!(g <= tiou(&a, &b) + 1e-15);
            prop_assert!((-1.0..=1.0).contains(&g));
        }

        #[test]
        fn giou_equals_tiou_when_enclosure_is_union(s in 0.0f64..50.0, l1 in 0.1f64..20.0, l2 in 0.1f64..20.0) {
            // Nested intervals: the enclosure equals the outer interval, no gap penalty.
            let outer = iv(s, s + l1 + l2);
            let inner = iv(s + 0.25 * l1, s + 0.25 * l1 + 0.5 * l2);
            prop_assert!((giou_1d(&outer, &inner) - tiou(&outer, &inner)).abs() < 1e-12);
        }

        #[test]
        fn giou_tends_to_minus_one_with_gap(gap in 1.0f64..1e6) {
            let a = iv(0.0, 1.0);
            let b = iv(1.0 + gap, 2.0 + gap);
            let g = giou_1d(&a, &b);
            prop_assert!(g < 0.0);
            // gap/(gap+2) -> 1, so giou -> -1.
            prop_assert!((g + gap / (gap + 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn locations_recoverable_from_level_and_index() {
        let cfg = PyramidConfig { num_levels: 5, base_length: 37, scale_factor: 3, frame_rate: 1.0 };
        for loc in pyramid_locations(&cfg) {
            assert_eq!(loc.t, loc.index as f64 * cfg.stride(loc.level));
        }
        assert_eq!(pyramid_locations(&cfg), pyramid_locations(&cfg));
    }
}
