//! The composite training objective and its hand-derived gradients.
//!
//! Three parts, combined as `cls + giou_weight * giou + conf_weight *
//! (conf_start + conf_end)`:
//!
//! * sigmoid focal classification loss over all non-omitted locations,
//!   normalized by the positive-location count (floored at one),
//! * a 1-D GIoU regression loss averaged over positive locations,
//! * squared-error boundary-confidence losses whose per-step active set is
//!   the positives currently predicting well enough (GIoU above a
//!   threshold), each normalized by that active count.
//!
//! Every gradient is written out manually and checked against central finite
//! differences by [`gradient_check`]; training is plain full-batch SGD with
//! momentum, parallel over sequences with a fixed reduction order so reruns
//! are bit-identical.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{confidence_training_mask, GroundTruthSegment, ClassVocab, LocationTargets};
use crate::features::FeaturePyramid;
use crate::heads::{
    confidence_scale_grad, HeadConfig, HeadOutputs, HeadParams, Heads, OutputGrads,
};
use crate::rng::Stream;
use crate::timeline::{pyramid_locations, PyramidConfig, PyramidLocation, TemporalInterval};

/// Loss hyperparameters. `giou_weight`/`conf_weight` are the mixing
/// coefficients of the total loss; `conf_beta` is the GIoU threshold of the
/// confidence-training mask; `sigma` the Gaussian confidence-scaling width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub giou_weight: f64,
    pub conf_weight: f64,
    pub conf_beta: f64,
    pub sigma: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            giou_weight: 0.5,
            conf_weight: 0.5,
            conf_beta: 0.5,
            sigma: 5.5,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(-1.0..=1.0).contains(&self.conf_beta) {
            return Err(format!("conf_beta must lie in [-1, 1], got {}", self.conf_beta));
        }
        if self.giou_weight < 0.0 || self.conf_weight < 0.0 {
            return Err("loss weights must be nonnegative".into());
        }
        if self.focal_gamma < 0.0 || !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err("focal parameters out of range".into());
        }
        Ok(())
    }
}

/// Unweighted loss components; [`LossBreakdown::total`] applies the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub giou: f64,
    pub conf_start: f64,
    pub conf_end: f64,
}

impl LossBreakdown {
    pub const ZERO: LossBreakdown =
        LossBreakdown { cls: 0.0, giou: 0.0, conf_start: 0.0, conf_end: 0.0 };

    pub fn total(&self, cfg: &LossConfig) -> f64 {
        self.cls
            + cfg.giou_weight * self.giou
            + cfg.conf_weight * (self.conf_start + self.conf_end)
    }

    fn add(&mut self, o: &LossBreakdown) {
        self.cls += o.cls;
        self.giou += o.giou;
        self.conf_start += o.conf_start;
        self.conf_end += o.conf_end;
    }

    fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            cls: self.cls * s,
            giou: self.giou * s,
            conf_start: self.conf_start * s,
            conf_end: self.conf_end * s,
        }
    }
}

/// `ln(sigmoid(z))`, stable for large |z|.
#[inline]
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Losses and total-loss output gradients for one sequence.
///
/// `conf_mask` is the per-step active set (see
/// [`confidence_training_mask`]); it is treated as a constant here, so the
/// same mask must be reused when comparing against finite differences.
/// Returned gradients are for the weighted total; the breakdown components
/// are unweighted.
pub fn loss_and_grads(
    outputs: &HeadOutputs,
    targets: &LocationTargets,
    locations: &[PyramidLocation],
    conf_mask: &[bool],
    head_cfg: &HeadConfig,
    cfg: &LossConfig,
) -> (LossBreakdown, OutputGrads) {
    let n = targets.num_locations;
    assert_eq!(outputs.num_locations, n, "outputs/targets location mismatch");
    assert_eq!(outputs.class_width, targets.class_width);
    assert_eq!(locations.len(), n);
    assert_eq!(conf_mask.len(), n);
    let width = targets.class_width;
    let mut grads = OutputGrads::zeros(n, width);
    let mut loss = LossBreakdown::ZERO;

    // Focal classification loss over non-omitted locations, all channels.
    let cls_denom = targets.num_positive().max(1) as f64;
    let (ga, al) = (cfg.focal_gamma, cfg.focal_alpha);
    let mut cls_sum = 0.0;
    for i in 0..n {
        if targets.cls_omit[i] {
            continue;
        }
        for c in 0..width {
            let z = outputs.logits[i * width + c];
            let y = targets.class_targets[i * width + c];
            let p = sigmoid(z);
            let q = sigmoid(-z); // 1 - p without cancellation
            let (term, dz) = if y > 0.5 {
                let lp = log_sigmoid(z);
                (-al * q.powf(ga) * lp, al * ga * p * q.powf(ga) * lp - al * q.powf(ga + 1.0))
            } else {
                let lq = log_sigmoid(-z);
                (
                    -(1.0 - al) * p.powf(ga) * lq,
                    (1.0 - al) * (p.powf(ga + 1.0) - ga * p.powf(ga) * q * lq),
                )
            };
            cls_sum += term;
            grads.d_logits[i * width + c] = dz / cls_denom;
        }
    }
    loss.cls = cls_sum / cls_denom;

    // GIoU regression loss over positives (unclamped predicted intervals).
    let np = targets.num_positive();
    if np > 0 {
        let npf = np as f64;
        let mut giou_sum = 0.0;
        for i in 0..n {
            if !targets.is_positive[i] {
                continue;
            }
            let gt = targets.assigned[i].expect("positive location must have an assigned segment");
            let t = locations[i].t;
            let pred =
                TemporalInterval::new(t - outputs.offset_start[i], t + outputs.offset_end[i]);
            let (g, dg_ds, dg_de) = giou_1d_with_pred_grad(&pred, &gt);
            giou_sum += 1.0 - g;
            // pred.start = t - r_s, pred.end = t + r_e.
            grads.d_offset_start[i] = cfg.giou_weight * dg_ds / npf;
            grads.d_offset_end[i] = cfg.giou_weight * (-dg_de) / npf;
        }
        loss.giou = giou_sum / npf;
    }

    // Boundary-confidence losses over the masked active set.
    let t_norm = conf_mask.iter().filter(|m| **m).count();
    if t_norm > 0 {
        let tf = t_norm as f64;
        let (mut s_sum, mut e_sum) = (0.0, 0.0);
        for i in 0..n {
            if !conf_mask[i] {
                continue;
            }
            let ds = outputs.conf_start[i] - targets.p_start[i];
            let de = outputs.conf_end[i] - targets.p_end[i];
            s_sum += ds * ds;
            e_sum += de * de;
            let (chain_s, chain_e) = if head_cfg.confidence_scaling {
                (
                    confidence_scale_grad(outputs.token_start[i], cfg.sigma),
                    confidence_scale_grad(outputs.token_end[i], cfg.sigma),
                )
            } else {
                (1.0, 1.0)
            };
            grads.d_token_start[i] = cfg.conf_weight * 2.0 * ds / tf * chain_s;
            grads.d_token_end[i] = cfg.conf_weight * 2.0 * de / tf * chain_e;
        }
        loss.conf_start = s_sum / tf;
        loss.conf_end = e_sum / tf;
    }

    (loss, grads)
}

/// 1-D GIoU of `(pred, gt)` plus its partial derivatives with respect to
/// `pred.start` and `pred.end`. `gt` must have positive length (so the union
/// is never empty). Min/max kinks take the subgradient of the arm in use.
fn giou_1d_with_pred_grad(pred: &TemporalInterval, gt: &TemporalInterval) -> (f64, f64, f64) {
    let (a_s, a_e) = (pred.start, pred.end);
    let (b_s, b_e) = (gt.start, gt.end);
    let inter = (a_e.min(b_e) - a_s.max(b_s)).max(0.0);
    let (di_ds, di_de) = if inter > 0.0 {
        (if a_s >= b_s { -1.0 } else { 0.0 }, if a_e <= b_e { 1.0 } else { 0.0 })
    } else {
        (0.0, 0.0)
    };
    let union = (a_e - a_s) + (b_e - b_s) - inter;
    debug_assert!(union > 0.0, "gt must have positive length");
    let du_ds = -1.0 - di_ds;
    let du_de = 1.0 - di_de;
    let hull = a_e.max(b_e) - a_s.min(b_s);
    let dh_ds = if a_s <= b_s { -1.0 } else { 0.0 };
    let dh_de = if a_e >= b_e { 1.0 } else { 0.0 };
    let giou = inter / union - (hull - union) / hull;
    let u2 = union * union;
    let h2 = hull * hull;
    let dg_ds = (di_ds * union - inter * du_ds) / u2 + (du_ds * hull - union * dh_ds) / h2;
    let dg_de = (di_de * union - inter * du_de) / u2 + (du_de * hull - union * dh_de) / h2;
    (giou, dg_ds, dg_de)
}

/// One training sequence: its pyramid geometry, features, and frozen targets.
#[derive(Debug, Clone)]
pub struct TrainSequence {
    pub pyr_cfg: PyramidConfig,
    pub features: FeaturePyramid,
    pub targets: LocationTargets,
    pub locations: Vec<PyramidLocation>,
}

impl TrainSequence {
    /// Assemble a sequence from raw features and annotations. `base_cfg`
    /// supplies levels/scale/frame-rate; the base length comes from the
    /// features themselves.
    pub fn prepare(
        base_cfg: &PyramidConfig,
        features: FeaturePyramid,
        segments: &[GroundTruthSegment],
        vocab: &ClassVocab,
        alpha: u32,
    ) -> Result<TrainSequence, String> {
        let pyr_cfg = base_cfg.with_base_length(features.base_length());
        pyr_cfg.validate()?;
        features.check_against(&pyr_cfg)?;
        let locations = pyramid_locations(&pyr_cfg);
        let targets = LocationTargets::assign(&pyr_cfg, &locations, segments, vocab, alpha)?;
        Ok(TrainSequence { pyr_cfg, features, targets, locations })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Abort when any parameter magnitude exceeds this (or the loss goes
    /// non-finite).
    pub divergence_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 500, lr: 0.01, momentum: 0.9, divergence_cap: 1e6 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.divergence_cap.is_finite() && self.divergence_cap > 0.0) {
            return Err(format!("divergence_cap must be positive, got {}", self.divergence_cap));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: total loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid training setup: {0}")]
    BadConfig(String),
}

/// Loss (mean over sequences) and summed parameter gradients for one batch,
/// with the confidence mask recomputed from the current predictions.
/// Per-sequence work runs in parallel; the reduction order is fixed, so the
/// result does not depend on thread scheduling.
pub fn batch_loss_and_grads(
    heads: &Heads,
    data: &[TrainSequence],
    cfg: &LossConfig,
) -> (LossBreakdown, HeadParams) {
    let per_seq: Vec<(LossBreakdown, HeadParams)> = data
        .par_iter()
        .map(|seq| {
            let (outputs, cache) = heads.forward(&seq.pyr_cfg, &seq.features, cfg.sigma);
            let predicted = outputs.predicted_intervals(&seq.locations);
            let mask = confidence_training_mask(&predicted, &seq.targets, cfg.conf_beta);
            let (loss, dout) = loss_and_grads(
                &outputs,
                &seq.targets,
                &seq.locations,
                &mask,
                &heads.cfg,
                cfg,
            );
            let mut grads = HeadParams::zeros(&heads.cfg);
            heads.backward(&seq.pyr_cfg, &cache, &dout, &mut grads);
            (loss, grads)
        })
        .collect();

    let inv_b = 1.0 / data.len() as f64;
    let mut loss = LossBreakdown::ZERO;
    let mut grads = HeadParams::zeros(&heads.cfg);
    for (l, g) in &per_seq {
        loss.add(l);
        grads.add_assign(g);
    }
    grads.scale_all(inv_b);
    (loss.scaled(inv_b), grads)
}

/// Full-batch SGD with momentum. Returns the per-step loss trace (losses are
/// measured at the parameters *before* each update); `on_step` fires after
/// every step for progress reporting.
pub fn train(
    heads: &mut Heads,
    data: &[TrainSequence],
    cfg: &LossConfig,
    tcfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LossBreakdown),
) -> Result<Vec<LossBreakdown>, TrainError> {
    cfg.validate().map_err(TrainError::BadConfig)?;
    tcfg.validate().map_err(TrainError::BadConfig)?;
    if data.is_empty() {
        return Err(TrainError::BadConfig("no training sequences".into()));
    }
    for seq in data {
        if seq.features.dim() != heads.cfg.feature_dim {
            return Err(TrainError::BadConfig("sequence feature dim does not match heads".into()));
        }
        if seq.targets.class_width != heads.cfg.vocab.width() {
            return Err(TrainError::BadConfig("sequence class width does not match heads".into()));
        }
    }

    let mut velocity = HeadParams::zeros(&heads.cfg);
    let mut trace = Vec::with_capacity(tcfg.steps);
    for step in 0..tcfg.steps {
        let (loss, grads) = batch_loss_and_grads(heads, data, cfg);
        let total = loss.total(cfg);
        if !total.is_finite() {
            return Err(TrainError::Diverged { step, loss: total });
        }
        sgd_momentum_update(&mut heads.params, &grads, &mut velocity, tcfg.lr, tcfg.momentum);
        if heads.params.max_abs() > tcfg.divergence_cap {
            return Err(TrainError::Diverged { step, loss: total });
        }
        on_step(step, &loss);
        trace.push(loss);
    }
    Ok(trace)
}

/// `v <- momentum * v + g; theta <- theta - lr * v`, elementwise.
fn sgd_momentum_update(
    params: &mut HeadParams,
    grads: &HeadParams,
    velocity: &mut HeadParams,
    lr: f64,
    momentum: f64,
) {
    for ((p, g), v) in params
        .layers_mut()
        .into_iter()
        .zip(grads.layers())
        .zip(velocity.layers_mut())
    {
        for (pw, (gw, vw)) in p.w.iter_mut().zip(g.w.iter().zip(v.w.iter_mut())) {
            *vw = momentum * *vw + gw;
            *pw -= lr * *vw;
        }
        for (pb, (gb, vb)) in p.b.iter_mut().zip(g.b.iter().zip(v.b.iter_mut())) {
            *vb = momentum * *vb + gb;
            *pb -= lr * *vb;
        }
    }
}

impl HeadParams {
    pub fn add_assign(&mut self, other: &HeadParams) {
        for (dst, src) in self.layers_mut().into_iter().zip(other.layers()) {
            for (d, s) in dst.w.iter_mut().zip(&src.w) {
                *d += s;
            }
            for (d, s) in dst.b.iter_mut().zip(&src.b) {
                *d += s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// How many parameters to probe (0 = all of them).
    pub sample: usize,
    pub seed: u64,
    /// Pass threshold on the relative error.
    pub tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, sample: 32, seed: 0, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub pass: bool,
}

/// Compare analytic parameter gradients against central finite differences
/// on one sequence.
///
/// The confidence mask is computed once from the unperturbed predictions and
/// held fixed across all probe evaluations, matching its treatment as a
/// constant inside a training step. Relative error is
/// `|analytic - fd| / max(floor, |analytic|, |fd|)` with the floor equal to
/// the pass tolerance.
pub fn gradient_check(
    heads: &mut Heads,
    seq: &TrainSequence,
    cfg: &LossConfig,
    gcfg: &GradCheckConfig,
) -> Result<GradCheckReport, String> {
    if !(gcfg.eps.is_finite() && gcfg.eps > 0.0) {
        return Err(format!("finite-difference eps must be positive, got {}", gcfg.eps));
    }
    cfg.validate()?;

    let (outputs, cache) = heads.forward(&seq.pyr_cfg, &seq.features, cfg.sigma);
    let predicted = outputs.predicted_intervals(&seq.locations);
    let mask = confidence_training_mask(&predicted, &seq.targets, cfg.conf_beta);
    let (_, dout) =
        loss_and_grads(&outputs, &seq.targets, &seq.locations, &mask, &heads.cfg, cfg);
    let mut analytic = HeadParams::zeros(&heads.cfg);
    heads.backward(&seq.pyr_cfg, &cache, &dout, &mut analytic);

    let total_at = |heads: &Heads| -> f64 {
        let (outputs, _) = heads.forward(&seq.pyr_cfg, &seq.features, cfg.sigma);
        loss_and_grads(&outputs, &seq.targets, &seq.locations, &mask, &heads.cfg, cfg)
            .0
            .total(cfg)
    };

    let n = heads.params.num_scalars();
    let indices: Vec<usize> = if gcfg.sample == 0 || gcfg.sample >= n {
        (0..n).collect()
    } else {
        let mut s = Stream::new(gcfg.seed, 0x6763_6b); // "gck"
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < gcfg.sample {
            picked.insert(s.below(n));
        }
        picked.into_iter().collect()
    };

    let mut report =
        GradCheckReport { checked: indices.len(), max_rel_err: 0.0, worst_param: 0, pass: true };
    for &i in &indices {
        let orig = heads.params.get_scalar(i);
        heads.params.set_scalar(i, orig + gcfg.eps);
        let up = total_at(heads);
        heads.params.set_scalar(i, orig - gcfg.eps);
        let dn = total_at(heads);
        heads.params.set_scalar(i, orig);
        let fd = (up - dn) / (2.0 * gcfg.eps);
        let a = analytic.get_scalar(i);
        let rel = (a - fd).abs() / gcfg.tol.max(a.abs()).max(fd.abs());
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = i;
        }
    }
    report.pass = report.max_rel_err < gcfg.tol;
    Ok(report)
}
