//! Radiomics-guided discriminator.
//!
//! Three `3x3 conv -> ReLU -> 2x2 max-pool` blocks read the 64x64 canvas; the
//! flattened result is optionally concatenated with the radiomics vector and
//! passed through two dense layers to a single logistic score.

use rand_chacha::ChaCha8Rng;

use crate::cswp::CANVAS;
use crate::encoder::ChannelPlan;
use crate::error::{Result, UalError};
use crate::grid::{FeatureStack, Grid};
use crate::nn::layers::{maxpool2, maxpool2_backward, relu, relu_backward, sigmoid};
use crate::nn::{conv_layer, linear_layer, Conv2d, Gradients, Group, Linear, ParamSet};

pub const DIS_BLOCKS: usize = 3;

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub convs: [Conv2d; DIS_BLOCKS],
    pub fc1: Linear,
    pub fc2: Linear,
    /// Width of the flattened convolution features.
    pub conv_width: usize,
    /// Length of the radiomics vector; 0 when radiomics are disabled.
    pub mpr_len: usize,
}

#[derive(Debug, Clone)]
pub struct DisTrace {
    inputs: Vec<FeatureStack>,
    activations: Vec<FeatureStack>,
    argmax: Vec<Vec<u32>>,
    fc_input: Vec<f64>,
    hidden: Vec<f64>,
    pub logit: f64,
    pub score: f64,
}

impl Discriminator {
    pub fn new(plan: ChannelPlan, mpr_len: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let widths = plan.discriminator();
        let mut cin = 1;
        let convs = std::array::from_fn(|k| {
            let conv = conv_layer(params, &format!("dis.conv{}", k + 1), cin, widths[k], 3, Group::Dis, rng);
            cin = widths[k];
            conv
        });
        let side = CANVAS >> DIS_BLOCKS;
        let conv_width = widths[DIS_BLOCKS - 1] * side * side;
        let fc1 = linear_layer(params, "dis.fc1", conv_width + mpr_len, plan.hidden(), Group::Dis, rng);
        let fc2 = linear_layer(params, "dis.fc2", plan.hidden(), 1, Group::Dis, rng);
        Discriminator {
            convs,
            fc1,
            fc2,
            conv_width,
            mpr_len,
        }
    }

    pub fn forward(&self, params: &ParamSet, canvas: &Grid, mpr: Option<&[f64]>) -> Result<DisTrace> {
        if canvas.shape() != (CANVAS, CANVAS) {
            return Err(UalError::Dimension(format!(
                "discriminator expects a {CANVAS}x{CANVAS} canvas, got {:?}",
                canvas.shape()
            )));
        }
        if canvas.data.iter().any(|v| !(0.0..=2.0).contains(v)) {
            return Err(UalError::Domain("canvas values must lie in [0, 2]".into()));
        }
        let given = mpr.map_or(0, <[f64]>::len);
        if given != self.mpr_len {
            return Err(UalError::Dimension(format!(
                "discriminator expects a radiomics vector of length {}, got {given}",
                self.mpr_len
            )));
        }
        let mut x = canvas.to_stack();
        let mut inputs = Vec::with_capacity(DIS_BLOCKS);
        let mut activations = Vec::with_capacity(DIS_BLOCKS);
        let mut argmax = Vec::with_capacity(DIS_BLOCKS);
        for conv in &self.convs {
            let a = relu(&conv.forward(params, &x));
            let (pooled, arg) = maxpool2(&a);
            inputs.push(x);
            activations.push(a);
            argmax.push(arg);
            x = pooled;
        }
        let mut fc_input = x.data;
        if let Some(m) = mpr {
            fc_input.extend_from_slice(m);
        }
        let hidden: Vec<f64> = self.fc1.forward(params, &fc_input).into_iter().map(|v| v.max(0.0)).collect();
        let logit = self.fc2.forward(params, &hidden)[0];
        if !logit.is_finite() {
            return Err(UalError::Numeric("non-finite discriminator logit".into()));
        }
        Ok(DisTrace {
            inputs,
            activations,
            argmax,
            fc_input,
            hidden,
            logit,
            score: sigmoid(logit),
        })
    }

    pub fn discriminate(&self, params: &ParamSet, canvas: &Grid, mpr: Option<&[f64]>) -> Result<f64> {
        Ok(self.forward(params, canvas, mpr)?.score)
    }

    /// Backward from the gradient w.r.t. the logit; accumulates parameter gradients and returns `d canvas`.
    pub fn backward_logit(&self, params: &ParamSet, trace: &DisTrace, d_logit: f64, grads: &mut Gradients) -> Grid {
        let mut d_hidden = self.fc2.backward(params, &trace.hidden, &[d_logit], grads);
        for (d, &a) in d_hidden.iter_mut().zip(&trace.hidden) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        let d_in = self.fc1.backward(params, &trace.fc_input, &d_hidden, grads);
        let last = &trace.activations[DIS_BLOCKS - 1];
        let side = last.height / 2;
        let mut d = FeatureStack::from_vec(last.channels, side, side, d_in[..self.conv_width].to_vec()).unwrap();
        for k in (0..DIS_BLOCKS).rev() {
            let act = &trace.activations[k];
            let da = maxpool2_backward(act.shape(), &trace.argmax[k], &d);
            let dy = relu_backward(act, &da);
            d = self.convs[k].backward(params, &trace.inputs[k], &dy, grads, true).unwrap();
        }
        d.channel_grid(0)
    }
}
