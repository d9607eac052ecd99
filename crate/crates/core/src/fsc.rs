//! Fusion and selection of the three modality feature stacks.
//!
//! Gated form:
//!
//! ```text
//! F_a   = tanh(conv_b(relu(conv_a([F_t1, F_t2, F_d]))))
//! F_seg = relu(conv_c([F_a, F_t1]))
//! F_dec = relu(conv_d([F_a, F_d]))
//! ```
//!
//! The ablated form replaces all of it with `F_s = relu(conv_s([F_t1, F_t2, F_d]))`
//! feeding both heads.

use rand_chacha::ChaCha8Rng;

use crate::error::{Result, UalError};
use crate::grid::FeatureStack;
use crate::nn::layers::{relu, relu_backward, tanh, tanh_backward};
use crate::nn::{conv_layer, Conv2d, Gradients, Group, ParamSet};

#[derive(Debug, Clone)]
pub enum Fsc {
    Gated {
        conv_a: Conv2d,
        conv_b: Conv2d,
        conv_c: Conv2d,
        conv_d: Conv2d,
    },
    Plain {
        conv_s: Conv2d,
    },
}

#[derive(Debug, Clone)]
pub enum FscTrace {
    Gated {
        input: FeatureStack,
        hidden: FeatureStack,
        fused: FeatureStack,
        seg_input: FeatureStack,
        dec_input: FeatureStack,
        seg: FeatureStack,
        dec: FeatureStack,
    },
    Plain {
        input: FeatureStack,
        out: FeatureStack,
    },
}

impl FscTrace {
    pub fn seg(&self) -> &FeatureStack {
        match self {
            FscTrace::Gated { seg, .. } => seg,
            FscTrace::Plain { out, .. } => out,
        }
    }

    pub fn dec(&self) -> &FeatureStack {
        match self {
            FscTrace::Gated { dec, .. } => dec,
            FscTrace::Plain { out, .. } => out,
        }
    }

    /// Preliminary fusion `F_a` (gated form only).
    pub fn fused(&self) -> Option<&FeatureStack> {
        match self {
            FscTrace::Gated { fused, .. } => Some(fused),
            FscTrace::Plain { .. } => None,
        }
    }
}

impl Fsc {
    pub fn gated(channels: usize, kernel: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        let c = channels;
        Fsc::Gated {
            conv_a: conv_layer(params, "fsc.conv_a", 3 * c, c, kernel, Group::Seg, rng),
            conv_b: conv_layer(params, "fsc.conv_b", c, c, kernel, Group::Seg, rng),
            conv_c: conv_layer(params, "fsc.conv_c", 2 * c, c, kernel, Group::Seg, rng),
            conv_d: conv_layer(params, "fsc.conv_d", 2 * c, c, kernel, Group::Seg, rng),
        }
    }

    pub fn plain(channels: usize, kernel: usize, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Self {
        Fsc::Plain {
            conv_s: conv_layer(params, "fsc.conv_s", 3 * channels, channels, kernel, Group::Seg, rng),
        }
    }

    fn check(f: [&FeatureStack; 3]) -> Result<()> {
        if f[1].shape() != f[0].shape() || f[2].shape() != f[0].shape() {
            return Err(UalError::Dimension(format!(
                "fusion inputs differ: {:?}, {:?}, {:?}",
                f[0].shape(),
                f[1].shape(),
                f[2].shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamSet, f_t1: &FeatureStack, f_t2: &FeatureStack, f_d: &FeatureStack) -> Result<FscTrace> {
        Self::check([f_t1, f_t2, f_d])?;
        let input = FeatureStack::concat(&[f_t1, f_t2, f_d])?;
        Ok(match self {
            Fsc::Gated {
                conv_a,
                conv_b,
                conv_c,
                conv_d,
            } => {
                let hidden = relu(&conv_a.forward(params, &input));
                let fused = tanh(&conv_b.forward(params, &hidden));
                let seg_input = FeatureStack::concat(&[&fused, f_t1])?;
                let dec_input = FeatureStack::concat(&[&fused, f_d])?;
                let seg = relu(&conv_c.forward(params, &seg_input));
                let dec = relu(&conv_d.forward(params, &dec_input));
                FscTrace::Gated {
                    input,
                    hidden,
                    fused,
                    seg_input,
                    dec_input,
                    seg,
                    dec,
                }
            }
            Fsc::Plain { conv_s } => {
                let out = relu(&conv_s.forward(params, &input));
                FscTrace::Plain { input, out }
            }
        })
    }

    /// `(F_seg, F_dec)`; the ablated form returns the same stack twice.
    pub fn fuse(&self, params: &ParamSet, f_t1: &FeatureStack, f_t2: &FeatureStack, f_d: &FeatureStack) -> Result<(FeatureStack, FeatureStack)> {
        let t = self.forward(params, f_t1, f_t2, f_d)?;
        Ok((t.seg().clone(), t.dec().clone()))
    }

    /// Gradients of the three modality stacks given gradients of both outputs.
    pub fn backward(
        &self,
        params: &ParamSet,
        trace: &FscTrace,
        d_seg: &FeatureStack,
        d_dec: &FeatureStack,
        grads: &mut Gradients,
    ) -> [FeatureStack; 3] {
        match (self, trace) {
            (
                Fsc::Gated {
                    conv_a,
                    conv_b,
                    conv_c,
                    conv_d,
                },
                FscTrace::Gated {
                    input,
                    hidden,
                    fused,
                    seg_input,
                    dec_input,
                    seg,
                    dec,
                },
            ) => {
                let c = fused.channels;
                let ds = relu_backward(seg, d_seg);
                let dsi = conv_c.backward(params, seg_input, &ds, grads, true).unwrap();
                let dd = relu_backward(dec, d_dec);
                let ddi = conv_d.backward(params, dec_input, &dd, grads, true).unwrap();
                let mut s = dsi.split(&[c, c]).into_iter();
                let (mut d_fused, d_t1_direct) = (s.next().unwrap(), s.next().unwrap());
                let mut s = ddi.split(&[c, c]).into_iter();
                let (d_fused2, d_d_direct) = (s.next().unwrap(), s.next().unwrap());
                d_fused.add_assign(&d_fused2);
                let dyb = tanh_backward(fused, &d_fused);
                let dh = conv_b.backward(params, hidden, &dyb, grads, true).unwrap();
                let dya = relu_backward(hidden, &dh);
                let dx = conv_a.backward(params, input, &dya, grads, true).unwrap();
                let mut parts = dx.split(&[c, c, c]);
                parts[0].add_assign(&d_t1_direct);
                parts[2].add_assign(&d_d_direct);
                parts.try_into().unwrap()
            }
            (Fsc::Plain { conv_s }, FscTrace::Plain { input, out }) => {
                let mut d = d_seg.clone();
                d.add_assign(d_dec);
                let dy = relu_backward(out, &d);
                let dx = conv_s.backward(params, input, &dy, grads, true).unwrap();
                let c = out.channels;
                dx.split(&[c, c, c]).try_into().unwrap()
            }
            _ => unreachable!("trace produced by a different fusion variant"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_stack(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureStack {
        FeatureStack::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamSet::new();
        let fsc = Fsc::gated(4, 3, &mut p, &mut rng);
        p.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let f: Vec<_> = (0..3).map(|_| random_stack(&mut rng, 4, 3, 3)).collect();
        let t = fsc.forward(&p, &f[0], &f[1], &f[2]).unwrap();
        assert!(t.fused().unwrap().data.iter().all(|&v| v == 0.0));
        assert!(t.seg().data.iter().all(|&v| v == 0.0));
        assert!(t.dec().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_ranges_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        let fsc = Fsc::gated(3, 3, &mut p, &mut rng);
        for _ in 0..50 {
            let f: Vec<_> = (0..3).map(|_| random_stack(&mut rng, 3, 4, 4)).collect();
            let t = fsc.forward(&p, &f[0], &f[1], &f[2]).unwrap();
            assert!(t.fused().unwrap().data.iter().all(|v| v.abs() < 1.0));
            assert!(t.seg().data.iter().chain(&t.dec().data).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        let fsc = Fsc::plain(2, 3, &mut p, &mut rng);
        let a = random_stack(&mut rng, 2, 4, 4);
        let b = random_stack(&mut rng, 2, 2, 4);
        assert!(matches!(fsc.fuse(&p, &a, &a, &b), Err(UalError::Dimension(_))));
    }
}
