//! In-memory feature pyramid: one channel-major plane per level.

use crate::timeline::PyramidConfig;

/// A `channels x len` plane of values, channel-major so per-channel rows are
/// contiguous for the convolution kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self { channels, len, data: vec![0.0; channels * len] }
    }

    #[inline]
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.data[channel * self.len..(channel + 1) * self.len]
    }

    #[inline]
    pub fn row_mut(&mut self, channel: usize) -> &mut [f64] {
        &mut self.data[channel * self.len..(channel + 1) * self.len]
    }

    #[inline]
    pub fn get(&self, channel: usize, i: usize) -> f64 {
        self.data[channel * self.len + i]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, i: usize, v: f64) {
        self.data[channel * self.len + i] = v;
    }

    /// Per-location column vector, allocating; used at I/O boundaries only.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, i)).collect()
    }

    /// Stride-2 average pooling: output location `i` is the mean of input
    /// locations `2i` and `2i + 1` (the last output keeps a lone input as-is).
    pub fn pooled_half(&self) -> FeatureMap {
        let out_len = self.len.div_ceil(2);
        let mut out = FeatureMap::zeros(self.channels, out_len);
        for c in 0..self.channels {
            for i in 0..out_len {
                let a = self.get(c, 2 * i);
                let v = if 2 * i + 1 < self.len { 0.5 * (a + self.get(c, 2 * i + 1)) } else { a };
                out.set(c, i, v);
            }
        }
        out
    }
}

/// The multi-resolution feature stack consumed by the prediction heads.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    /// Build all levels by repeated stride-2 averaging of a level-0 plane.
    pub fn from_level0(level0: FeatureMap, num_levels: usize) -> Self {
        assert!(num_levels >= 1);
        let mut levels = Vec::with_capacity(num_levels);
        levels.push(level0);
        for l in 1..num_levels {
            levels.push(levels[l - 1].pooled_half());
        }
        Self { levels }
    }

    pub fn dim(&self) -> usize {
        self.levels.first().map_or(0, |l| l.channels)
    }

    pub fn level_lens(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.len).collect()
    }

    pub fn total_locations(&self) -> usize {
        self.levels.iter().map(|l| l.len).sum()
    }

    /// Level-0 length, i.e. the sequence length in feature frames.
    pub fn base_length(&self) -> usize {
        self.levels.first().map_or(0, |l| l.len)
    }

    /// Check the pyramid against a config (scale-factor-2 geometry).
    pub fn check_against(&self, cfg: &PyramidConfig) -> Result<(), String> {
        if self.levels.len() != cfg.num_levels {
            return Err(format!(
                "pyramid has {} levels, config expects {}",
                self.levels.len(),
                cfg.num_levels
            ));
        }
        for (l, level) in self.levels.iter().enumerate() {
            let want = cfg.level_len(l);
            if level.len != want {
                return Err(format!("level {l} has {} locations, config expects {want}", level.len));
            }
            if level.channels != self.dim() {
                return Err(format!("level {l} feature dim differs from level 0"));
            }
        }
        Ok(())
    }
}
