//! Three parallel convolution channels, one per non-contrast modality.
//!
//! Each channel runs four blocks of `3x3 conv -> ReLU -> edge injection -> 2x2
//! max-pool`, doubling the channel count per block from the base width.

use rand_chacha::ChaCha8Rng;

use crate::edfpm::{inject_in_place, inject_weight_grad, EdgePyramid};
use crate::error::{Result, UalError};
use crate::grid::{FeatureStack, Grid};
use crate::modality::Modality;
use crate::nn::layers::{maxpool2, maxpool2_backward, relu, relu_backward};
use crate::nn::{conv_layer, Conv2d, Gradients, Group, ParamId, ParamSet};

pub const BLOCKS: usize = 4;

/// Channel widths of the network, all derived from one base width (64 reproduces the full-size layout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelPlan {
    pub base: usize,
}

impl ChannelPlan {
    pub const FULL: ChannelPlan = ChannelPlan { base: 64 };

    pub fn encoder(&self) -> [usize; BLOCKS] {
        [self.base, 2 * self.base, 4 * self.base, 8 * self.base]
    }

    pub fn bottleneck(&self) -> usize {
        8 * self.base
    }

    pub fn decoder(&self) -> [usize; BLOCKS] {
        [8 * self.base, 4 * self.base, 2 * self.base, self.base]
    }

    pub fn discriminator(&self) -> [usize; 3] {
        [self.base, 2 * self.base, 4 * self.base]
    }

    pub fn hidden(&self) -> usize {
        4 * self.base
    }
}

#[derive(Debug, Clone)]
pub struct EncoderChannel {
    pub modality: Modality,
    pub convs: [Conv2d; BLOCKS],
    /// Bias-free 1x1 projections of the edge-dissimilarity levels.
    pub projections: [ParamId; BLOCKS],
}

/// Activations a channel keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct ChannelTrace {
    inputs: Vec<FeatureStack>,
    activations: Vec<FeatureStack>,
    argmax: Vec<Vec<u32>>,
    pub output: FeatureStack,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub plan: ChannelPlan,
    pub channels: [EncoderChannel; 3],
}

impl Encoder {
    pub fn new(plan: ChannelPlan, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let widths = plan.encoder();
        let channels = Modality::ALL.map(|m| {
            let mut cin = 1;
            let convs = std::array::from_fn(|k| {
                let conv = conv_layer(params, &format!("enc.{}.conv{}", m.name(), k + 1), cin, widths[k], 3, Group::Seg, rng);
                cin = widths[k];
                conv
            });
            let projections = std::array::from_fn(|k| {
                params.add(format!("enc.{}.edge{}.weight", m.name(), k + 1), &[widths[k], 1], Group::Seg, 0.5, rng)
            });
            EncoderChannel {
                modality: m,
                convs,
                projections,
            }
        });
        Encoder { plan, channels }
    }

    pub fn check_input(height: usize, width: usize) -> Result<()> {
        let f = 1 << BLOCKS;
        if height % f != 0 || width % f != 0 || height == 0 || width == 0 {
            return Err(UalError::Dimension(format!(
                "encoder input {height}x{width} must have both sides divisible by {f}"
            )));
        }
        Ok(())
    }

    /// Run one modality channel; `pyramid = None` skips edge injection.
    pub fn forward_channel(
        &self,
        params: &ParamSet,
        index: usize,
        image: &Grid,
        pyramid: Option<&EdgePyramid>,
    ) -> Result<ChannelTrace> {
        Self::check_input(image.height, image.width)?;
        let ch = &self.channels[index];
        let mut x = image.to_stack();
        let mut inputs = Vec::with_capacity(BLOCKS);
        let mut activations = Vec::with_capacity(BLOCKS);
        let mut argmax = Vec::with_capacity(BLOCKS);
        for k in 0..BLOCKS {
            let mut a = relu(&ch.convs[k].forward(params, &x));
            inputs.push(x);
            activations.push(a.clone());
            if let Some(p) = pyramid {
                let level = p.level(k);
                if level.shape() != (a.height, a.width) {
                    return Err(UalError::Dimension(format!(
                        "pyramid level {k} is {:?}, block output is {}x{}",
                        level.shape(),
                        a.height,
                        a.width
                    )));
                }
                inject_in_place(level, &mut a, params.get(ch.projections[k]));
            }
            if !a.is_finite() {
                return Err(UalError::Numeric(format!(
                    "non-finite activation in encoder {} block {}",
                    ch.modality.name(),
                    k + 1
                )));
            }
            let (pooled, arg) = maxpool2(&a);
            argmax.push(arg);
            x = pooled;
        }
        Ok(ChannelTrace {
            inputs,
            activations,
            argmax,
            output: x,
        })
    }

    pub fn backward_channel(
        &self,
        params: &ParamSet,
        index: usize,
        trace: &ChannelTrace,
        pyramid: Option<&EdgePyramid>,
        d_output: &FeatureStack,
        grads: &mut Gradients,
    ) {
        let ch = &self.channels[index];
        let mut d = d_output.clone();
        for k in (0..BLOCKS).rev() {
            let act = &trace.activations[k];
            let d_inj = maxpool2_backward(act.shape(), &trace.argmax[k], &d);
            if let Some(p) = pyramid {
                inject_weight_grad(p.level(k), &d_inj, grads.slot_mut(params, ch.projections[k]));
            }
            let dy = relu_backward(act, &d_inj);
            match ch.convs[k].backward(params, &trace.inputs[k], &dy, grads, k > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    /// Encode the three modalities; `pyramids = None` disables edge injection.
    pub fn encode(
        &self,
        params: &ParamSet,
        images: [&Grid; 3],
        pyramids: Option<&[EdgePyramid; 3]>,
    ) -> Result<[FeatureStack; 3]> {
        let mut out = Vec::with_capacity(3);
        for (i, img) in images.iter().enumerate() {
            out.push(self.forward_channel(params, i, img, pyramids.map(|p| &p[i]))?.output);
        }
        Ok(out.try_into().unwrap())
    }
}
