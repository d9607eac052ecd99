//! The complete network: encoder, fusion, both heads and the discriminator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::edfpm::{plane_pyramids, EdgePyramid};
use crate::encoder::{ChannelPlan, ChannelTrace, Encoder, BLOCKS};
use crate::error::{Result, UalError};
use crate::fsc::{Fsc, FscTrace};
use crate::grid::{FeatureStack, Grid};
use crate::heads::{DecoderTrace, DetHead, DetPrediction, DetTrace, SegDecoder, SegPrediction, NUM_CLASSES};
use crate::modality::{Modality, ModalityCombo};
use crate::mprgd::Discriminator;
use crate::nn::{Gradients, ParamSet};
use crate::phantom::Sample;
use crate::radiomics;

/// Everything that fixes the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub plan: ChannelPlan,
    pub height: usize,
    pub width: usize,
    pub edfpm: bool,
    pub fsc: bool,
    pub fsc_kernel: usize,
    pub modalities: ModalityCombo,
    /// Whether a discriminator exists at all.
    pub discriminator: bool,
    /// Radiomics vector length fed to the discriminator; 0 disables it.
    pub mpr_len: usize,
}

impl ModelConfig {
    pub fn from_train(cfg: &TrainConfig, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            plan: ChannelPlan { base: cfg.base_channels },
            height,
            width,
            edfpm: cfg.ablations.edfpm,
            fsc: cfg.ablations.fsc,
            fsc_kernel: cfg.fsc_kernel,
            modalities: cfg.modalities,
            discriminator: cfg.ablations.adversarial(),
            mpr_len: if cfg.ablations.radiomics() { radiomics::vector_len(&cfg.phases) } else { 0 },
        }
    }
}

/// The non-contrast planes a forward pass may read; `None` marks an absent modality.
#[derive(Debug, Clone, Copy)]
pub struct NcmriView<'a> {
    pub planes: [Option<&'a Grid>; 3],
}

impl<'a> NcmriView<'a> {
    /// The planes of `sample` selected by `combo`; contrast planes are never touched.
    pub fn of(sample: &'a Sample, combo: &ModalityCombo) -> Self {
        NcmriView {
            planes: Modality::ALL.map(|m| combo.contains(m).then(|| m.plane(sample))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UalNetwork {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub fusion: Fsc,
    pub decoder: SegDecoder,
    pub det: DetHead,
    pub dis: Option<Discriminator>,
}

/// Activations of one generator forward pass.
#[derive(Debug, Clone)]
pub struct GenTrace {
    channels: [Option<ChannelTrace>; 3],
    pyramids: Option<[EdgePyramid; 3]>,
    fsc: FscTrace,
    pub seg: DecoderTrace,
    pub det: DetTrace,
}

impl GenTrace {
    pub fn probs(&self) -> &Grid {
        &self.seg.probs
    }
}

impl UalNetwork {
    /// Build the network and draw its parameters from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(UalNetwork, ParamSet)> {
        Encoder::check_input(config.height, config.width)?;
        if config.plan.base == 0 {
            return Err(UalError::Config("base channel width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::new(config.plan, &mut params, &mut rng);
        let c = config.plan.bottleneck();
        let fusion = if config.fsc {
            Fsc::gated(c, config.fsc_kernel, &mut params, &mut rng)
        } else {
            Fsc::plain(c, config.fsc_kernel, &mut params, &mut rng)
        };
        let decoder = SegDecoder::new(config.plan, &mut params, &mut rng);
        let det = DetHead::new(config.plan, config.height, config.width, &mut params, &mut rng);
        let dis = config
            .discriminator
            .then(|| Discriminator::new(config.plan, config.mpr_len, &mut params, &mut rng));
        Ok((
            UalNetwork {
                config,
                encoder,
                fusion,
                decoder,
                det,
                dis,
            },
            params,
        ))
    }

    fn check_view(&self, view: &NcmriView) -> Result<()> {
        for m in self.config.modalities.items() {
            match view.planes[m.index()] {
                None => return Err(UalError::Data(format!("modality {} is configured but missing from the input", m.name()))),
                Some(g) if g.shape() != (self.config.height, self.config.width) => {
                    return Err(UalError::Dimension(format!(
                        "{} plane is {:?}, network expects {}x{}",
                        m.name(),
                        g.shape(),
                        self.config.height,
                        self.config.width
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Encoder, fusion and both heads; reads only the configured non-contrast planes.
    pub fn generator_forward(&self, params: &ParamSet, view: &NcmriView) -> Result<GenTrace> {
        self.check_view(view)?;
        let combo = &self.config.modalities;
        let used = Modality::ALL.map(|m| if combo.contains(m) { view.planes[m.index()] } else { None });
        let pyramids = if self.config.edfpm { Some(plane_pyramids(used, BLOCKS)?) } else { None };
        let mut channels: [Option<ChannelTrace>; 3] = [None, None, None];
        for m in combo.items() {
            let i = m.index();
            channels[i] = Some(self.encoder.forward_channel(params, i, used[i].unwrap(), pyramids.as_ref().map(|p| &p[i]))?);
        }
        let zero = FeatureStack::zeros(
            self.config.plan.bottleneck(),
            self.config.height >> BLOCKS,
            self.config.width >> BLOCKS,
        );
        let feats: Vec<&FeatureStack> = channels.iter().map(|c| c.as_ref().map_or(&zero, |t| &t.output)).collect();
        let fsc = self.fusion.forward(params, feats[0], feats[1], feats[2])?;
        let seg = self.decoder.forward(params, fsc.seg())?;
        let det = self.det.forward(params, fsc.dec())?;
        Ok(GenTrace {
            channels,
            pyramids,
            fsc,
            seg,
            det,
        })
    }

    /// Accumulate generator parameter gradients from gradients w.r.t. the probabilities,
    /// the class logits and the raw box `(cx, cy, side)`.
    pub fn generator_backward(
        &self,
        params: &ParamSet,
        trace: &GenTrace,
        d_probs: &Grid,
        d_logits: [f64; NUM_CLASSES],
        d_box: [f64; 3],
        grads: &mut Gradients,
    ) {
        let d_seg = self.decoder.backward(params, &trace.seg, d_probs, grads);
        let d_dec = self.det.backward(params, &trace.det, d_logits, d_box, grads);
        let d_feats = self.fusion.backward(params, &trace.fsc, &d_seg, &d_dec, grads);
        for (i, ch) in trace.channels.iter().enumerate() {
            if let Some(t) = ch {
                let pyr = trace.pyramids.as_ref().map(|p| &p[i]);
                self.encoder.backward_channel(params, i, t, pyr, &d_feats[i], grads);
            }
        }
    }

    /// Test-time path: segmentation probabilities and the clamped detection.
    pub fn infer(&self, params: &ParamSet, view: &NcmriView) -> Result<(SegPrediction, DetPrediction)> {
        let t = self.generator_forward(params, view)?;
        let det = self.det.prediction(&t.det);
        Ok((SegPrediction { probs: t.seg.probs }, det))
    }
}
