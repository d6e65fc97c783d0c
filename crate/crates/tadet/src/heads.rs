//! Prediction heads: small 1-D convolution towers with hand-written backprop.
//!
//! Two trunks run over every pyramid level with shared weights:
//!
//! * a boundary trunk (two conv+tanh layers) feeding an offset top (ReLU,
//!   scaled by the level stride) and a boundary-token top,
//! * a classification trunk of the same shape feeding one-vs-all logits.
//!
//! Boundary tokens become confidences through Gaussian scaling
//! `exp(-token^2 / (2 sigma^2))`, so an exactly-zero token means full
//! confidence and the score decays smoothly with token magnitude.
//!
//! Forward passes record enough intermediate state ([`ForwardCache`]) for an
//! exact reverse pass; no autodiff framework is involved, which keeps the
//! gradient path small enough to verify against finite differences.

use serde::{Deserialize, Serialize};

use crate::assign::ClassVocab;
use crate::features::{FeatureMap, FeaturePyramid};
use crate::rng::Stream;
use crate::timeline::{PyramidConfig, PyramidLocation, TemporalInterval};

/// 1-D convolution, odd kernel, symmetric zero padding (output length equals
/// input length). Weights are `[out][in][k]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd for symmetric padding, got {kernel}");
        assert!(in_ch > 0 && out_ch > 0);
        Self { in_ch, out_ch, kernel, w: vec![0.0; out_ch * in_ch * kernel], b: vec![0.0; out_ch] }
    }

    #[inline]
    fn wi(&self, o: usize, c: usize, k: usize) -> usize {
        (o * self.in_ch + c) * self.kernel + k
    }

    pub fn num_scalars(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        assert_eq!(x.channels, self.in_ch, "conv input channel mismatch");
        let len = x.len;
        let pad = (self.kernel - 1) / 2;
        let mut y = FeatureMap::zeros(self.out_ch, len);
        for o in 0..self.out_ch {
            let yo = y.row_mut(o);
            yo.fill(self.b[o]);
            for c in 0..self.in_ch {
                let xr = x.row(c);
                if self.kernel == 3 && len >= 2 {
                    // Hot path: one fused pass instead of one pass per tap,
                    // with window slices the compiler can vectorize.
                    let base = self.wi(o, c, 0);
                    let (w0, w1, w2) = (self.w[base], self.w[base + 1], self.w[base + 2]);
                    yo[0] += w1 * xr[0] + w2 * xr[1];
                    for (d, win) in yo[1..len - 1].iter_mut().zip(xr.windows(3)) {
                        *d += w0 * win[0] + w1 * win[1] + w2 * win[2];
                    }
                    yo[len - 1] += w0 * xr[len - 2] + w1 * xr[len - 1];
                    continue;
                }
                for k in 0..self.kernel {
                    let wv = self.w[self.wi(o, c, k)];
                    let off = k as isize - pad as isize;
                    // Valid output range keeps x index in bounds; the zero
                    // padding contributes nothing so it is simply skipped.
                    let i0 = (-off).max(0) as usize;
                    let i1 = ((len as isize - off).min(len as isize)).max(0) as usize;
                    for i in i0..i1 {
                        yo[i] += wv * xr[(i as isize + off) as usize];
                    }
                }
            }
        }
        y
    }

    /// Reverse pass: accumulate parameter gradients into `grad` (same shape
    /// as `self`) and, when requested, the input gradient into `dx`.
    pub fn backward(
        &self,
        x: &FeatureMap,
        dy: &FeatureMap,
        grad: &mut Conv1d,
        mut dx: Option<&mut FeatureMap>,
    ) {
        assert_eq!(x.channels, self.in_ch);
        assert_eq!(dy.channels, self.out_ch);
        assert_eq!(x.len, dy.len);
        assert_eq!(grad.w.len(), self.w.len());
        let len = x.len;
        let pad = (self.kernel - 1) / 2;
        if let Some(dx) = dx.as_deref_mut() {
            assert_eq!(dx.channels, self.in_ch);
            assert_eq!(dx.len, len);
        }
        for o in 0..self.out_ch {
            let dyo = dy.row(o);
            grad.b[o] += dyo.iter().sum::<f64>();
            for c in 0..self.in_ch {
                let xr = x.row(c);
                if self.kernel == 3 && len >= 2 {
                    // Fused single-pass weight gradients...
                    let base = self.wi(o, c, 0);
                    let (mut g0, mut g1, mut g2) = (0.0, dyo[0] * xr[0], dyo[0] * xr[1]);
                    for (d, win) in dyo[1..len - 1].iter().zip(xr.windows(3)) {
                        g0 += d * win[0];
                        g1 += d * win[1];
                        g2 += d * win[2];
                    }
                    g0 += dyo[len - 1] * xr[len - 2];
                    g1 += dyo[len - 1] * xr[len - 1];
                    grad.w[base] += g0;
                    grad.w[base + 1] += g1;
                    grad.w[base + 2] += g2;
                    // ...and the input gradient as a gather over dy (the
                    // kernel flips: dx[j] = w0 dy[j+1] + w1 dy[j] + w2 dy[j-1]).
                    if let Some(dx) = dx.as_deref_mut() {
                        let (w0, w1, w2) =
                            (self.w[base], self.w[base + 1], self.w[base + 2]);
                        let dxr = dx.row_mut(c);
                        dxr[0] += w1 * dyo[0] + w0 * dyo[1];
                        for (d, win) in dxr[1..len - 1].iter_mut().zip(dyo.windows(3)) {
                            *d += w2 * win[0] + w1 * win[1] + w0 * win[2];
                        }
                        dxr[len - 1] += w2 * dyo[len - 2] + w1 * dyo[len - 1];
                    }
                    continue;
                }
                for k in 0..self.kernel {
                    let off = k as isize - pad as isize;
                    let i0 = (-off).max(0) as usize;
                    let i1 = ((len as isize - off).min(len as isize)).max(0) as usize;
                    let mut gw = 0.0;
                    for i in i0..i1 {
                        gw += dyo[i] * xr[(i as isize + off) as usize];
                    }
                    grad.w[self.wi(o, c, k)] += gw;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = self.w[self.wi(o, c, k)];
                        let dxr = dx.row_mut(c);
                        for i in i0..i1 {
                            dxr[(i as isize + off) as usize] += wv * dyo[i];
                        }
                    }
                }
            }
        }
    }
}

fn tanh_forward(z: &FeatureMap) -> FeatureMap {
    let mut h = z.clone();
    for v in &mut h.data {
        *v = v.tanh();
    }
    h
}

/// `dz` from `dh`, using the tanh outputs `h` (tanh' = 1 - h^2).
fn tanh_backward(h: &FeatureMap, dh: &FeatureMap) -> FeatureMap {
    let mut dz = dh.clone();
    for (g, hv) in dz.data.iter_mut().zip(&h.data) {
        *g *= 1.0 - hv * hv;
    }
    dz
}

/// Static head shape: input feature width, trunk width, class vocabulary,
/// and whether boundary tokens pass through Gaussian confidence scaling
/// (turning scaling off reproduces the raw-token ablation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub vocab: ClassVocab,
    pub confidence_scaling: bool,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.feature_dim == 0 || self.hidden_width == 0 {
            return Err("head feature_dim and hidden_width must be positive".into());
        }
        if self.vocab.width() == 0 {
            return Err("class vocabulary is empty".into());
        }
        Ok(())
    }
}

/// All trainable tensors, in the fixed order used for flat-index access:
/// boundary trunk (two layers), offset top, token top, classification trunk
/// (two layers), classification top. Within a layer, weights precede biases.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub bnd1: Conv1d,
    pub bnd2: Conv1d,
    pub offset_top: Conv1d,
    pub token_top: Conv1d,
    pub cls1: Conv1d,
    pub cls2: Conv1d,
    pub cls_top: Conv1d,
}

pub const HEAD_KERNEL: usize = 3;
/// Logit bias at init; sigmoid(-2) ~ 0.119 keeps early background loss small.
pub const CLS_BIAS_INIT: f64 = -2.0;

impl HeadParams {
    pub fn zeros(cfg: &HeadConfig) -> Self {
        let d = cfg.feature_dim;
        let h = cfg.hidden_width;
        let width = cfg.vocab.width();
        Self {
            bnd1: Conv1d::zeros(d, h, HEAD_KERNEL),
            bnd2: Conv1d::zeros(h, h, HEAD_KERNEL),
            offset_top: Conv1d::zeros(h, 2, HEAD_KERNEL),
            token_top: Conv1d::zeros(h, 2, HEAD_KERNEL),
            cls1: Conv1d::zeros(d, h, HEAD_KERNEL),
            cls2: Conv1d::zeros(h, h, HEAD_KERNEL),
            cls_top: Conv1d::zeros(h, width, HEAD_KERNEL),
        }
    }

    /// Random init: weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`,
    /// biases zero except the classification-top bias at [`CLS_BIAS_INIT`].
    pub fn init(cfg: &HeadConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let root = Stream::new(seed, 0x6865_6164); // "head" stream tag
        for (li, layer) in p.layers_mut().into_iter().enumerate() {
            let mut s = root.substream(li as u64);
            let bound = 1.0 / ((layer.in_ch * layer.kernel) as f64).sqrt();
            for w in &mut layer.w {
                *w = s.uniform(-bound, bound);
            }
        }
        p.cls_top.b.fill(CLS_BIAS_INIT);
        p
    }

    pub fn layers(&self) -> [&Conv1d; 7] {
        [
            &self.bnd1,
            &self.bnd2,
            &self.offset_top,
            &self.token_top,
            &self.cls1,
            &self.cls2,
            &self.cls_top,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Conv1d; 7] {
        [
            &mut self.bnd1,
            &mut self.bnd2,
            &mut self.offset_top,
            &mut self.token_top,
            &mut self.cls1,
            &mut self.cls2,
            &mut self.cls_top,
        ]
    }

    pub fn num_scalars(&self) -> usize {
        self.layers().iter().map(|l| l.num_scalars()).sum()
    }

    /// Read parameter `i` in the fixed flat order (for finite differencing).
    pub fn get_scalar(&self, mut i: usize) -> f64 {
        for layer in self.layers() {
            if i < layer.w.len() {
                return layer.w[i];
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                return layer.b[i];
            }
            i -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_scalar(&mut self, mut i: usize, v: f64) {
        for layer in self.layers_mut() {
            if i < layer.w.len() {
                layer.w[i] = v;
                return;
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                layer.b[i] = v;
                return;
            }
            i -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn fill(&mut self, v: f64) {
        for layer in self.layers_mut() {
            layer.w.fill(v);
            layer.b.fill(v);
        }
    }

    pub fn scale_all(&mut self, s: f64) {
        for layer in self.layers_mut() {
            for w in &mut layer.w {
                *w *= s;
            }
            for b in &mut layer.b {
                *b *= s;
            }
        }
    }

    /// Largest absolute parameter value (divergence tripwire in training).
    pub fn max_abs(&self) -> f64 {
        self.layers()
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// The trained model: static shape plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub cfg: HeadConfig,
    pub params: HeadParams,
}

impl Heads {
    pub fn init(cfg: HeadConfig, seed: u64) -> Self {
        cfg.validate().expect("invalid head config");
        Self { cfg, params: HeadParams::init(&cfg, seed) }
    }

    /// Run both towers over every level. Outputs are flat in level-major
    /// location order; the cache carries per-level intermediates for
    /// [`Heads::backward`].
    pub fn forward(
        &self,
        pyr_cfg: &PyramidConfig,
        features: &FeaturePyramid,
        sigma: f64,
    ) -> (HeadOutputs, ForwardCache) {
        features.check_against(pyr_cfg).expect("feature pyramid does not match config");
        assert_eq!(features.dim(), self.cfg.feature_dim, "feature dim mismatch");
        let width = self.cfg.vocab.width();
        let total = features.total_locations();
        let mut out = HeadOutputs {
            num_locations: total,
            class_width: width,
            level_lens: features.level_lens(),
            offset_start: Vec::with_capacity(total),
            offset_end: Vec::with_capacity(total),
            token_start: Vec::with_capacity(total),
            token_end: Vec::with_capacity(total),
            conf_start: Vec::with_capacity(total),
            conf_end: Vec::with_capacity(total),
            logits: Vec::with_capacity(total * width),
        };
        let mut cache = ForwardCache { levels: Vec::with_capacity(features.levels.len()) };
        let p = &self.params;
        for (level, x) in features.levels.iter().enumerate() {
            let stride = pyr_cfg.stride(level);
            let b_h1 = tanh_forward(&p.bnd1.forward(x));
            let b_h2 = tanh_forward(&p.bnd2.forward(&b_h1));
            let offset_raw = p.offset_top.forward(&b_h2);
            let token = p.token_top.forward(&b_h2);
            let c_h1 = tanh_forward(&p.cls1.forward(x));
            let c_h2 = tanh_forward(&p.cls2.forward(&c_h1));
            let logits = p.cls_top.forward(&c_h2);
            for i in 0..x.len {
                let rs = offset_raw.get(0, i).max(0.0) * stride;
                let re = offset_raw.get(1, i).max(0.0) * stride;
                let bs = token.get(0, i);
                let be = token.get(1, i);
                out.offset_start.push(rs);
                out.offset_end.push(re);
                out.token_start.push(bs);
                out.token_end.push(be);
                if self.cfg.confidence_scaling {
                    out.conf_start.push(confidence_scale(bs, sigma));
                    out.conf_end.push(confidence_scale(be, sigma));
                } else {
                    out.conf_start.push(bs);
                    out.conf_end.push(be);
                }
                for cl in 0..width {
                    out.logits.push(logits.get(cl, i));
                }
            }
            cache.levels.push(LevelCache {
                x: x.clone(),
                b_h1,
                b_h2,
                c_h1,
                c_h2,
                offset_raw,
            });
        }
        (out, cache)
    }

    /// Reverse pass from output gradients to parameter gradients,
    /// accumulated into `grads` (zero it first for a fresh batch).
    ///
    /// `d_token_*` is taken with respect to the raw boundary tokens; the
    /// confidence-scaling chain rule happens in the loss layer, which knows
    /// sigma and the scaling mode.
    pub fn backward(
        &self,
        pyr_cfg: &PyramidConfig,
        cache: &ForwardCache,
        dout: &OutputGrads,
        grads: &mut HeadParams,
    ) {
        let p = &self.params;
        let width = self.cfg.vocab.width();
        let mut base = 0usize; // flat index of the level's first location
        for (level, lc) in cache.levels.iter().enumerate() {
            let stride = pyr_cfg.stride(level);
            let len = lc.x.len;

            // Top gradients in per-level plane form.
            let mut d_offset_raw = FeatureMap::zeros(2, len);
            let mut d_token = FeatureMap::zeros(2, len);
            let mut d_logits = FeatureMap::zeros(width, len);
            for i in 0..len {
                let gi = base + i;
                // ReLU then stride scaling: r = max(raw, 0) * stride.
                if lc.offset_raw.get(0, i) > 0.0 {
                    d_offset_raw.set(0, i, dout.d_offset_start[gi] * stride);
                }
                if lc.offset_raw.get(1, i) > 0.0 {
                    d_offset_raw.set(1, i, dout.d_offset_end[gi] * stride);
                }
                d_token.set(0, i, dout.d_token_start[gi]);
                d_token.set(1, i, dout.d_token_end[gi]);
                for cl in 0..width {
                    d_logits.set(cl, i, dout.d_logits[gi * width + cl]);
                }
            }

            // Boundary tower: both tops feed the shared trunk feature.
            let mut d_b_h2 = FeatureMap::zeros(p.bnd2.out_ch, len);
            p.offset_top.backward(&lc.b_h2, &d_offset_raw, &mut grads.offset_top, Some(&mut d_b_h2));
            p.token_top.backward(&lc.b_h2, &d_token, &mut grads.token_top, Some(&mut d_b_h2));
            let d_b_z2 = tanh_backward(&lc.b_h2, &d_b_h2);
            let mut d_b_h1 = FeatureMap::zeros(p.bnd1.out_ch, len);
            p.bnd2.backward(&lc.b_h1, &d_b_z2, &mut grads.bnd2, Some(&mut d_b_h1));
            let d_b_z1 = tanh_backward(&lc.b_h1, &d_b_h1);
            p.bnd1.backward(&lc.x, &d_b_z1, &mut grads.bnd1, None);

            // Classification tower.
            let mut d_c_h2 = FeatureMap::zeros(p.cls2.out_ch, len);
            p.cls_top.backward(&lc.c_h2, &d_logits, &mut grads.cls_top, Some(&mut d_c_h2));
            let d_c_z2 = tanh_backward(&lc.c_h2, &d_c_h2);
            let mut d_c_h1 = FeatureMap::zeros(p.cls1.out_ch, len);
            p.cls2.backward(&lc.c_h1, &d_c_z2, &mut grads.cls2, Some(&mut d_c_h1));
            let d_c_z1 = tanh_backward(&lc.c_h1, &d_c_h1);
            p.cls1.backward(&lc.x, &d_c_z1, &mut grads.cls1, None);

            base += len;
        }
    }
}

/// Raw head outputs for one sequence, flat in level-major location order
/// (aligned with `pyramid_locations` and `LocationTargets`).
///
/// Offsets are nonnegative and in level-0 frame units (already scaled by the
/// level stride); `conf_*` is the Gaussian-scaled boundary confidence, or the
/// raw token when scaling is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub num_locations: usize,
    pub class_width: usize,
    pub level_lens: Vec<usize>,
    pub offset_start: Vec<f64>,
    pub offset_end: Vec<f64>,
    pub token_start: Vec<f64>,
    pub token_end: Vec<f64>,
    pub conf_start: Vec<f64>,
    pub conf_end: Vec<f64>,
    pub logits: Vec<f64>,
}

impl HeadOutputs {
    /// Flat-index range of one pyramid level.
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        let start: usize = self.level_lens[..level].iter().sum();
        start..start + self.level_lens[level]
    }

    /// Unclamped predicted intervals `[t - r_s, t + r_e]` for every location,
    /// as used by the per-step confidence-training mask.
    pub fn predicted_intervals(&self, locations: &[PyramidLocation]) -> Vec<TemporalInterval> {
        assert_eq!(locations.len(), self.num_locations);
        locations
            .iter()
            .enumerate()
            .map(|(i, loc)| {
                TemporalInterval::new(loc.t - self.offset_start[i], loc.t + self.offset_end[i])
            })
            .collect()
    }
}

/// Loss gradients with respect to the head outputs, flat and aligned with
/// [`HeadOutputs`]. Offset gradients are w.r.t. the stride-scaled offsets;
/// token gradients are w.r.t. the raw tokens.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub d_offset_start: Vec<f64>,
    pub d_offset_end: Vec<f64>,
    pub d_token_start: Vec<f64>,
    pub d_token_end: Vec<f64>,
    pub d_logits: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(num_locations: usize, class_width: usize) -> Self {
        Self {
            d_offset_start: vec![0.0; num_locations],
            d_offset_end: vec![0.0; num_locations],
            d_token_start: vec![0.0; num_locations],
            d_token_end: vec![0.0; num_locations],
            d_logits: vec![0.0; num_locations * class_width],
        }
    }
}

/// Per-level intermediates kept by the forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    levels: Vec<LevelCache>,
}

#[derive(Debug, Clone)]
struct LevelCache {
    x: FeatureMap,
    b_h1: FeatureMap,
    b_h2: FeatureMap,
    c_h1: FeatureMap,
    c_h2: FeatureMap,
    offset_raw: FeatureMap,
}

/// Gaussian boundary-confidence scaling: `exp(-token^2 / (2 sigma^2))`.
///
/// Evaluated exactly as written (numerator `token * token`, denominator
/// `2 * (sigma * sigma)`), which downstream comparisons rely on. Sigma must
/// be positive and finite.
pub fn confidence_scale(token: f64, sigma: f64) -> f64 {
    assert!(sigma.is_finite() && sigma > 0.0, "sigma must be positive and finite, got {sigma}");
    (-(token * token) / (2.0 * (sigma * sigma))).exp()
}

/// Derivative of [`confidence_scale`] with respect to the token.
pub fn confidence_scale_grad(token: f64, sigma: f64) -> f64 {
    confidence_scale(token, sigma) * (-token / (sigma * sigma))
}

/// Predicted interval at a location: `[t - r_s, t + r_e]` clamped to the
/// sequence `[0, seq_len]`. Clamping is an inference-time concern; the
/// training losses see the unclamped interval.
pub fn decode_boundaries(t: f64, r_start: f64, r_end: f64, seq_len: f64) -> TemporalInterval {
    debug_assert!(r_start >= 0.0 && r_end >= 0.0, "offsets must be nonnegative");
    debug_assert!((0.0..=seq_len).contains(&t));
    TemporalInterval::new((t - r_start).max(0.0), (t + r_end).min(seq_len))
}
