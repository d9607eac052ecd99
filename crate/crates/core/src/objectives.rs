//! Training objectives and their analytic derivatives.
//!
//! Probabilities and scores are clamped to `[EPS, 1 - EPS]` before any logarithm.
//! Box regression works on coordinates divided by the image extent: `cx` by the
//! width, `cy` by the height and `side` by the longer image side.

use crate::error::{Result, UalError};
use crate::grid::{BoxTuple, Grid};
use crate::heads::{DetPrediction, NUM_CLASSES};

pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Adversarial weight of the segmentation loss.
    pub lambda1: f64,
    /// Box regression weight of the detection loss.
    pub lambda2: f64,
    /// Adversarial weight of the detection loss.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(UalError::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

fn check_shapes(pred: &Grid, target: &Grid) -> Result<()> {
    if !pred.same_shape(target) {
        return Err(UalError::Dimension(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over pixels, `-[t ln p + (1 - t) ln(1 - p)]`.
pub fn pix_ce(pred: &Grid, target: &Grid) -> Result<f64> {
    check_shapes(pred, target)?;
    let n = pred.data.len() as f64;
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / n)
}

/// Derivative of `pix_ce` w.r.t. each probability (zero where the clamp is active).
pub fn pix_ce_grad(pred: &Grid, target: &Grid) -> Result<Grid> {
    check_shapes(pred, target)?;
    let n = pred.data.len() as f64;
    Ok(Grid {
        height: pred.height,
        width: pred.width,
        data: pred
            .data
            .iter()
            .zip(&target.data)
            .map(|(&p, &t)| {
                if p < EPS || p > 1.0 - EPS {
                    0.0
                } else {
                    (-t / p + (1.0 - t) / (1.0 - p)) / n
                }
            })
            .collect(),
    })
}

/// Binary cross-entropy of one score against label `y`.
pub fn adv_loss(score: f64, y: f64) -> f64 {
    let s = clamp_prob(score);
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

/// `d adv_loss / d score` (zero where the clamp is active).
pub fn adv_loss_grad(score: f64, y: f64) -> f64 {
    if !(EPS..=1.0 - EPS).contains(&score) {
        return 0.0;
    }
    -y / score + (1.0 - y) / (1.0 - score)
}

/// `d adv_loss / d logit` for `score = sigmoid(logit)`.
pub fn adv_loss_grad_logit(score: f64, y: f64) -> f64 {
    score - y
}

/// Labels `(fake, real)` of the discriminator loss: `(1, 0)` as printed, `(0, 1)` when swapped.
pub fn disc_labels(swap: bool) -> (f64, f64) {
    if swap {
        (0.0, 1.0)
    } else {
        (1.0, 0.0)
    }
}

pub fn disc_loss(score_fake: f64, score_real: f64, swap: bool) -> f64 {
    let (yf, yr) = disc_labels(swap);
    adv_loss(score_fake, yf) + adv_loss(score_real, yr)
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Negative log-probability of the target class.
pub fn cls_loss(class_probs: &[f64; NUM_CLASSES], cls: u8) -> f64 {
    -class_probs[cls as usize].max(EPS).ln()
}

/// `d cls_loss / d logits` for softmax probabilities.
pub fn cls_loss_grad_logits(class_probs: &[f64; NUM_CLASSES], cls: u8) -> [f64; NUM_CLASSES] {
    let mut g = *class_probs;
    g[cls as usize] -= 1.0;
    g
}

fn box_scales(height: usize, width: usize) -> [f64; 3] {
    [width as f64, height as f64, height.max(width) as f64]
}

fn box_diffs(pred: &BoxTuple, target: &BoxTuple, height: usize, width: usize) -> [f64; 3] {
    let s = box_scales(height, width);
    [
        (pred.cx - target.cx) / s[0],
        (pred.cy - target.cy) / s[1],
        (pred.side - target.side) / s[2],
    ]
}

/// Smooth-L1 over normalized `(cx, cy, side)` differences.
pub fn reg_loss(pred: &BoxTuple, target: &BoxTuple, height: usize, width: usize) -> f64 {
    box_diffs(pred, target, height, width).iter().map(|&d| smooth_l1(d)).sum()
}

/// `d reg_loss / d (cx, cy, side)` in pixels.
pub fn reg_loss_grad(pred: &BoxTuple, target: &BoxTuple, height: usize, width: usize) -> [f64; 3] {
    let s = box_scales(height, width);
    let d = box_diffs(pred, target, height, width);
    [0, 1, 2].map(|i| smooth_l1_grad(d[i]) / s[i])
}

/// Detection loss `-ln p[cls] + lambda2 [cls >= 1] reg + lambda3 adv(score, 1)`.
///
/// `extent` is the image `(height, width)` used to normalize box coordinates.
pub fn det_loss(
    pred: &DetPrediction,
    cls_target: u8,
    box_target: Option<&BoxTuple>,
    adv_score: f64,
    w: &LossWeights,
    extent: (usize, usize),
) -> Result<f64> {
    if cls_target as usize >= NUM_CLASSES {
        return Err(UalError::Data(format!("class label {cls_target} out of range")));
    }
    let reg = if cls_target >= 1 {
        let t = box_target.ok_or_else(|| UalError::Data(format!("class {cls_target} sample has no box target")))?;
        reg_loss(&pred.bbox, t, extent.0, extent.1)
    } else {
        0.0
    };
    Ok(cls_loss(&pred.class_probs, cls_target) + w.lambda2 * reg + w.lambda3 * adv_loss(adv_score, 1.0))
}

/// Segmentation loss `pix_ce + lambda1 adv(score, 1)`.
pub fn seg_loss(pred: &Grid, target: &Grid, adv_score: f64, w: &LossWeights) -> Result<f64> {
    Ok(pix_ce(pred, target)? + w.lambda1 * adv_loss(adv_score, 1.0))
}
