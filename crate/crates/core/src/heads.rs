//! Segmentation decoder and single-object detection head.

use rand_chacha::ChaCha8Rng;

use crate::encoder::{ChannelPlan, BLOCKS};
use crate::error::{Result, UalError};
use crate::grid::{BoxTuple, FeatureStack, Grid};
use crate::nn::layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid, zero_insert2, zero_insert2_backward,
};
use crate::nn::{conv_layer, linear_layer, Conv2d, Gradients, Group, Linear, ParamSet};

pub const NUM_CLASSES: usize = 3;

/// Per-pixel tumour probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SegPrediction {
    pub probs: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPrediction {
    /// (no tumour, hemangioma, HCC), sums to one.
    pub class_probs: [f64; NUM_CLASSES],
    pub bbox: BoxTuple,
}

impl DetPrediction {
    pub fn predicted_class(&self) -> u8 {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if self.class_probs[c] > self.class_probs[best] {
                best = c;
            }
        }
        best as u8
    }
}

/// Four `2x upsample -> 3x3 conv -> ReLU` blocks, then a 1x1 conv and a logistic.
#[derive(Debug, Clone)]
pub struct SegDecoder {
    pub blocks: [Conv2d; BLOCKS],
    pub out: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DecoderTrace {
    upsampled: Vec<FeatureStack>,
    activations: Vec<FeatureStack>,
    pub probs: Grid,
}

impl SegDecoder {
    pub fn new(plan: ChannelPlan, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let widths = plan.decoder();
        let mut cin = plan.bottleneck();
        let blocks = std::array::from_fn(|k| {
            let conv = conv_layer(params, &format!("dec.deconv{}", k + 1), cin, widths[k], 3, Group::Seg, rng);
            cin = widths[k];
            conv
        });
        let out = conv_layer(params, "dec.out", cin, 1, 1, Group::Seg, rng);
        SegDecoder { blocks, out }
    }

    pub fn forward(&self, params: &ParamSet, f_seg: &FeatureStack) -> Result<DecoderTrace> {
        if f_seg.channels != self.blocks[0].cin {
            return Err(UalError::Dimension(format!(
                "decoder expects {} channels, got {}",
                self.blocks[0].cin, f_seg.channels
            )));
        }
        let mut x = f_seg.clone();
        let mut upsampled = Vec::with_capacity(BLOCKS);
        let mut activations = Vec::with_capacity(BLOCKS);
        for conv in &self.blocks {
            let z = zero_insert2(&x);
            x = relu(&conv.forward(params, &z));
            upsampled.push(z);
            activations.push(x.clone());
        }
        let logits = self.out.forward(params, &x);
        if !logits.is_finite() {
            return Err(UalError::Numeric("non-finite segmentation logits".into()));
        }
        let probs = Grid {
            height: logits.height,
            width: logits.width,
            data: logits.data.iter().map(|&v| sigmoid(v)).collect(),
        };
        Ok(DecoderTrace {
            upsampled,
            activations,
            probs,
        })
    }

    pub fn decode(&self, params: &ParamSet, f_seg: &FeatureStack) -> Result<SegPrediction> {
        Ok(SegPrediction {
            probs: self.forward(params, f_seg)?.probs,
        })
    }

    /// Backward from the gradient w.r.t. the probabilities; returns the gradient w.r.t. `F_seg`.
    pub fn backward(&self, params: &ParamSet, trace: &DecoderTrace, d_probs: &Grid, grads: &mut Gradients) -> FeatureStack {
        let p = &trace.probs;
        let d_logits = FeatureStack {
            channels: 1,
            height: p.height,
            width: p.width,
            data: d_probs.data.iter().zip(&p.data).map(|(d, &q)| d * q * (1.0 - q)).collect(),
        };
        self.backward_logits(params, trace, &d_logits, grads)
    }

    /// Backward from the gradient w.r.t. the pre-logistic outputs.
    pub fn backward_logits(&self, params: &ParamSet, trace: &DecoderTrace, d_logits: &FeatureStack, grads: &mut Gradients) -> FeatureStack {
        let last = trace.activations.last().unwrap();
        let mut d = self.out.backward(params, last, d_logits, grads, true).unwrap();
        for k in (0..BLOCKS).rev() {
            let dy = relu_backward(&trace.activations[k], &d);
            let dz = self.blocks[k].backward(params, &trace.upsampled[k], &dy, grads, true).unwrap();
            d = zero_insert2_backward(&dz);
        }
        d
    }
}

/// Global average pool, two dense layers, 3 class logits and 4 box values.
#[derive(Debug, Clone)]
pub struct DetHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct DetTrace {
    input_shape: (usize, usize, usize),
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    /// Logistic of the four raw box outputs (cx, cy, w, h) as image fractions.
    box_unit: [f64; 4],
    pub logits: [f64; NUM_CLASSES],
    pub class_probs: [f64; NUM_CLASSES],
    /// Square box before clamping; this is what the losses see.
    pub raw_box: BoxTuple,
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|z| (z - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

impl DetHead {
    pub fn new(plan: ChannelPlan, height: usize, width: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let hidden = plan.hidden();
        DetHead {
            fc1: linear_layer(params, "det.fc1", plan.bottleneck(), hidden, Group::Dec, rng),
            fc2: linear_layer(params, "det.fc2", hidden, NUM_CLASSES + 4, Group::Dec, rng),
            height,
            width,
        }
    }

    pub fn forward(&self, params: &ParamSet, f_dec: &FeatureStack) -> Result<DetTrace> {
        if f_dec.channels != self.fc1.input {
            return Err(UalError::Dimension(format!(
                "detection head expects {} channels, got {}",
                self.fc1.input, f_dec.channels
            )));
        }
        let pooled = global_avg_pool(f_dec);
        let hidden: Vec<f64> = self.fc1.forward(params, &pooled).into_iter().map(|v| v.max(0.0)).collect();
        let out = self.fc2.forward(params, &hidden);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(UalError::Numeric("non-finite detection logits".into()));
        }
        let logits = [out[0], out[1], out[2]];
        let box_unit = [sigmoid(out[3]), sigmoid(out[4]), sigmoid(out[5]), sigmoid(out[6])];
        let (w, h) = (self.width as f64, self.height as f64);
        let side = (box_unit[2] * w).max(box_unit[3] * h);
        Ok(DetTrace {
            input_shape: f_dec.shape(),
            pooled,
            hidden,
            box_unit,
            logits,
            class_probs: softmax(&logits),
            raw_box: BoxTuple {
                cx: box_unit[0] * w,
                cy: box_unit[1] * h,
                side,
            },
        })
    }

    /// Class distribution and the square box clamped inside the image.
    pub fn detect(&self, params: &ParamSet, f_dec: &FeatureStack) -> Result<DetPrediction> {
        Ok(self.prediction(&self.forward(params, f_dec)?))
    }

    pub fn prediction(&self, trace: &DetTrace) -> DetPrediction {
        DetPrediction {
            class_probs: trace.class_probs,
            bbox: trace.raw_box.clamped(self.height, self.width),
        }
    }

    /// Backward from logit gradients and gradients w.r.t. the raw box `(cx, cy, side)`.
    pub fn backward(
        &self,
        params: &ParamSet,
        trace: &DetTrace,
        d_logits: [f64; NUM_CLASSES],
        d_box: [f64; 3],
        grads: &mut Gradients,
    ) -> FeatureStack {
        let (w, h) = (self.width as f64, self.height as f64);
        let u = trace.box_unit;
        let mut d_unit = [d_box[0] * w, d_box[1] * h, 0.0, 0.0];
        if u[2] * w >= u[3] * h {
            d_unit[2] = d_box[2] * w;
        } else {
            d_unit[3] = d_box[2] * h;
        }
        let mut d_out = vec![0.0; NUM_CLASSES + 4];
        d_out[..NUM_CLASSES].copy_from_slice(&d_logits);
        for k in 0..4 {
            d_out[NUM_CLASSES + k] = d_unit[k] * u[k] * (1.0 - u[k]);
        }
        let mut d_hidden = self.fc2.backward(params, &trace.hidden, &d_out, grads);
        for (d, &a) in d_hidden.iter_mut().zip(&trace.hidden) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        let d_pooled = self.fc1.backward(params, &trace.pooled, &d_hidden, grads);
        global_avg_pool_backward(trace.input_shape, &d_pooled)
    }
}
